#ifndef MFLOAD_H
#define MFLOAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  MF_STATUS_OK = 0,
  MF_STATUS_NULL_POINTER = 1,
  MF_STATUS_INVALID_ARGUMENT = 2,
  MF_STATUS_CONFIGURATION = 3,
  MF_STATUS_INSUFFICIENT_DATA = 4,
  MF_STATUS_DEGENERATE_INPUT = 5,
  MF_STATUS_CALIBRATION = 6,
  MF_STATUS_PARSE = 7,
  MF_STATUS_IO = 8,
  MF_STATUS_OUT_OF_RANGE = 9,
  MF_STATUS_PANIC = 10,
} MfStatus;

typedef enum {
  MF_POLICY_ROUND_ROBIN = 0,
  MF_POLICY_LEAST_LOADED = 1,
  MF_POLICY_MIN_IMBALANCE = 2,
} MfPolicy;

/**
 * Estimated h(q) curve.
 */
typedef struct MfCurve MfCurve;

/**
 * Result of one simulation run.
 */
typedef struct MfRun MfRun;

/**
 * Simulation scenario.
 */
typedef struct MfScenario MfScenario;

/**
 * Generated traffic intensity trace.
 */
typedef struct MfTrace MfTrace;

/**
 * One monitoring report.
 */
typedef struct {
  double t;
  double imb_cpu;
  double imb_ram;
  double imb_net;
  double imb_tot;
} MfReport;

typedef struct {
  /**
   * Seconds; equal to the run length when `censored` is set.
   */
  double equilibrium_time;
  bool censored;
  double imb_tot_final;
  double efficiency;
  double processing_period_system;
  size_t completed;
} MfSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mf_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t mf_last_error_message(char *buf, size_t cap);

/**
 * Estimates h(q) of `series`. `q` may be null (with `q_len` 0) for the
 * default grid -5..-1, 1..5. Dyadic scales from 16 slots, linear detrending.
 *
 * # Safety
 * `series` must hold `len` doubles, `q` must hold `q_len` doubles, `out` must be writable.
 */
MfStatus mf_estimate_hurst(const double *series,
                           size_t len,
                           const double *q,
                           size_t q_len,
                           MfCurve **out);

/**
 * Number of (q, h) points.
 *
 * # Safety
 * `curve` must be null or a live handle.
 */
size_t mf_curve_len(const MfCurve *curve);

/**
 * # Safety
 * `curve` must be a live handle; `q` and `h` must be writable.
 */
MfStatus mf_curve_point(const MfCurve *curve, size_t index, double *q, double *h);

/**
 * h(2); NaN for a null handle.
 *
 * # Safety
 * `curve` must be null or a live handle.
 */
double mf_curve_hurst(const MfCurve *curve);

/**
 * h(q_min) - h(q_max); NaN for a null handle.
 *
 * # Safety
 * `curve` must be null or a live handle.
 */
double mf_curve_delta_h(const MfCurve *curve);

/**
 * # Safety
 * `curve` must be null or a handle not yet freed.
 */
void mf_curve_free(MfCurve *curve);

/**
 * Generates a 2^14-slot trace targeting (h, delta_h). On `MF_STATUS_CALIBRATION`
 * the closest trace found is still stored in `out`.
 *
 * # Safety
 * `out` must be writable.
 */
MfStatus mf_generate_traffic(double h, double delta_h, uint64_t seed, MfTrace **out);

/**
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t mf_trace_len(const MfTrace *trace);

/**
 * # Safety
 * `trace` must be null or a live handle.
 */
double mf_trace_slot_duration(const MfTrace *trace);

/**
 * Measured h(2) of the trace.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
double mf_trace_hurst(const MfTrace *trace);

/**
 * # Safety
 * `trace` must be null or a live handle.
 */
double mf_trace_delta_h(const MfTrace *trace);

/**
 * Copies up to `cap` slot intensities into `buf` and stores the number copied in `written`.
 *
 * # Safety
 * `trace` must be a live handle; `buf` must hold `cap` doubles; `written` must be writable.
 */
MfStatus mf_trace_copy(const MfTrace *trace, double *buf, size_t cap, size_t *written);

/**
 * # Safety
 * `trace` must be null or a handle not yet freed.
 */
void mf_trace_free(MfTrace *trace);

/**
 * IMB_tot of a cluster given as row-major `n x 3` arrays of utilization
 * (cpu, ram, net in [0, 1]) and capacity. `weights` may be null for equal weights.
 *
 * # Safety
 * `util` and `capacity` must hold `3 * n` doubles, `weights` 3 doubles or null, `out` writable.
 */
MfStatus mf_total_imbalance(const double *util,
                            const double *capacity,
                            size_t n,
                            const double *weights,
                            double *out);

/**
 * Default two-cluster scenario (H 0.9, delta-h 4, min_imbalance, 500 s).
 *
 * # Safety
 * `out` must be writable.
 */
MfStatus mf_scenario_default(MfScenario **out);

/**
 * Builds a scenario from TOML configuration text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
MfStatus mf_scenario_from_toml(const char *toml, MfScenario **out);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
MfStatus mf_scenario_set_seed(MfScenario *scenario, uint64_t seed);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
MfStatus mf_scenario_set_policy(MfScenario *scenario, MfPolicy policy);

/**
 * Sets the traffic target.
 *
 * # Safety
 * `scenario` must be a live handle.
 */
MfStatus mf_scenario_set_traffic(MfScenario *scenario, double h, double delta_h);

/**
 * # Safety
 * `scenario` must be null or a handle not yet freed.
 */
void mf_scenario_free(MfScenario *scenario);

/**
 * Runs the scenario.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
MfStatus mf_run(const MfScenario *scenario, MfRun **out);

/**
 * # Safety
 * `run` must be null or a live handle.
 */
size_t mf_run_report_count(const MfRun *run);

/**
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
MfStatus mf_run_report(const MfRun *run, size_t index, MfReport *out);

/**
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
MfStatus mf_run_summary(const MfRun *run, MfSummary *out);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void mf_run_free(MfRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFLOAD_H */

//! C interface to `mfload`.
//!
//! Every function returns an [`MfStatus`]. Objects cross the boundary as
//! opaque pointers created by `mf_*_new`/producer functions and released
//! with the matching `mf_*_free`. After a failing call,
//! [`mf_last_error_message`] describes the error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mfload::balancer::PolicyKind;
use mfload::cluster::{ServerId, ServerSnapshot};
use mfload::config::RunConfig;
use mfload::fractal::{estimate_hurst_curve, HurstCurve, QGrid, ScaleGrid};
use mfload::metrics::{cluster_imbalance, Weights};
use mfload::sim::{self, RunOutput, Scenario};
use mfload::traffic::{generate_traffic, MultifractalSpec, TrafficTrace};
use mfload::{Error, Resources};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Configuration = 3,
    InsufficientData = 4,
    DegenerateInput = 5,
    Calibration = 6,
    Parse = 7,
    Io = 8,
    OutOfRange = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfPolicy {
    RoundRobin = 0,
    LeastLoaded = 1,
    MinImbalance = 2,
}

impl From<MfPolicy> for PolicyKind {
    fn from(p: MfPolicy) -> Self {
        match p {
            MfPolicy::RoundRobin => PolicyKind::RoundRobin,
            MfPolicy::LeastLoaded => PolicyKind::LeastLoaded,
            MfPolicy::MinImbalance => PolicyKind::MinImbalance,
        }
    }
}

/// Estimated h(q) curve.
pub struct MfCurve(HurstCurve);

/// Generated traffic intensity trace.
pub struct MfTrace(TrafficTrace);

/// Simulation scenario.
pub struct MfScenario(Scenario);

/// Result of one simulation run.
pub struct MfRun {
    output: RunOutput,
    run_length: f64,
}

/// One monitoring report.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MfReport {
    pub t: f64,
    pub imb_cpu: f64,
    pub imb_ram: f64,
    pub imb_net: f64,
    pub imb_tot: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MfSummary {
    /// Seconds; equal to the run length when `censored` is set.
    pub equilibrium_time: f64,
    pub censored: bool,
    pub imb_tot_final: f64,
    pub efficiency: f64,
    pub processing_period_system: f64,
    pub completed: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> MfStatus {
    match e {
        Error::Parameter(_) => MfStatus::InvalidArgument,
        Error::Configuration(_) => MfStatus::Configuration,
        Error::InsufficientData(_) => MfStatus::InsufficientData,
        Error::DegenerateInput(_) => MfStatus::DegenerateInput,
        Error::Calibration { .. } => MfStatus::Calibration,
        Error::Parse { .. } => MfStatus::Parse,
        Error::Io { .. } => MfStatus::Io,
    }
}

fn fail(status: MfStatus, msg: impl Into<String>) -> MfStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> MfStatus {
    let status = status_of(&e);
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> MfStatus) -> MfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == MfStatus::Ok {
                set_error(String::new());
            }
            status
        }
        Err(_) => fail(MfStatus::Panic, "internal panic"),
    }
}

/// Reads `len` values from `data`; a null pointer is only accepted when `len` is 0.
unsafe fn slice<'a>(data: *const f64, len: usize) -> Option<&'a [f64]> {
    if len == 0 {
        Some(&[])
    } else if data.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(data, len))
    }
}

fn into_handle<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mf_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Estimates h(q) of `series`. `q` may be null (with `q_len` 0) for the
/// default grid -5..-1, 1..5. Dyadic scales from 16 slots, linear detrending.
///
/// # Safety
/// `series` must hold `len` doubles, `q` must hold `q_len` doubles, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_estimate_hurst(
    series: *const f64,
    len: usize,
    q: *const f64,
    q_len: usize,
    out: *mut *mut MfCurve,
) -> MfStatus {
    guard(|| {
        if out.is_null() {
            return fail(MfStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let (Some(series), Some(q)) = (slice(series, len), slice(q, q_len)) else {
            return fail(MfStatus::NullPointer, "null data pointer");
        };
        let result = (|| {
            let grid = if q.is_empty() { QGrid::default() } else { QGrid::new(q.to_vec())? };
            let scales = ScaleGrid::for_length(series.len())?;
            estimate_hurst_curve(series, &grid, &scales)
        })();
        match result {
            Ok(curve) => {
                *out = into_handle(MfCurve(curve));
                MfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of (q, h) points.
///
/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_curve_len(curve: *const MfCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.0.points().len())
}

/// # Safety
/// `curve` must be a live handle; `q` and `h` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_curve_point(
    curve: *const MfCurve,
    index: usize,
    q: *mut f64,
    h: *mut f64,
) -> MfStatus {
    guard(|| {
        let Some(c) = curve.as_ref() else {
            return fail(MfStatus::NullPointer, "curve is null");
        };
        if q.is_null() || h.is_null() {
            return fail(MfStatus::NullPointer, "output pointer is null");
        }
        match c.0.points().get(index) {
            Some(p) => {
                *q = p.q;
                *h = p.h;
                MfStatus::Ok
            }
            None => fail(MfStatus::OutOfRange, format!("point {index} out of range")),
        }
    })
}

/// h(2); NaN for a null handle.
///
/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_curve_hurst(curve: *const MfCurve) -> f64 {
    curve.as_ref().map_or(f64::NAN, |c| c.0.hurst())
}

/// h(q_min) - h(q_max); NaN for a null handle.
///
/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_curve_delta_h(curve: *const MfCurve) -> f64 {
    curve.as_ref().map_or(f64::NAN, |c| c.0.delta_h)
}

/// # Safety
/// `curve` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_curve_free(curve: *mut MfCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Generates a 2^14-slot trace targeting (h, delta_h). On `MF_STATUS_CALIBRATION`
/// the closest trace found is still stored in `out`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_generate_traffic(
    h: f64,
    delta_h: f64,
    seed: u64,
    out: *mut *mut MfTrace,
) -> MfStatus {
    guard(|| {
        if out.is_null() {
            return fail(MfStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        match generate_traffic(&MultifractalSpec::new(h, delta_h, seed)) {
            Ok(t) => {
                *out = into_handle(MfTrace(t));
                MfStatus::Ok
            }
            Err(Error::Calibration { iterations, best }) => {
                *out = into_handle(MfTrace((*best).clone()));
                from_error(Error::Calibration { iterations, best })
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_trace_len(trace: *const MfTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_trace_slot_duration(trace: *const MfTrace) -> f64 {
    trace.as_ref().map_or(f64::NAN, |t| t.0.slot_duration)
}

/// Measured h(2) of the trace.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_trace_hurst(trace: *const MfTrace) -> f64 {
    trace.as_ref().map_or(f64::NAN, |t| t.0.achieved.hurst())
}

/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_trace_delta_h(trace: *const MfTrace) -> f64 {
    trace.as_ref().map_or(f64::NAN, |t| t.0.delta_h)
}

/// Copies up to `cap` slot intensities into `buf` and stores the number copied in `written`.
///
/// # Safety
/// `trace` must be a live handle; `buf` must hold `cap` doubles; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_trace_copy(
    trace: *const MfTrace,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> MfStatus {
    guard(|| {
        let Some(t) = trace.as_ref() else {
            return fail(MfStatus::NullPointer, "trace is null");
        };
        if written.is_null() || (buf.is_null() && cap > 0) {
            return fail(MfStatus::NullPointer, "output pointer is null");
        }
        let n = t.0.slots.len().min(cap);
        if n > 0 {
            ptr::copy_nonoverlapping(t.0.slots.as_ptr(), buf, n);
        }
        *written = n;
        MfStatus::Ok
    })
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_trace_free(trace: *mut MfTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// IMB_tot of a cluster given as row-major `n x 3` arrays of utilization
/// (cpu, ram, net in [0, 1]) and capacity. `weights` may be null for equal weights.
///
/// # Safety
/// `util` and `capacity` must hold `3 * n` doubles, `weights` 3 doubles or null, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mf_total_imbalance(
    util: *const f64,
    capacity: *const f64,
    n: usize,
    weights: *const f64,
    out: *mut f64,
) -> MfStatus {
    guard(|| {
        if out.is_null() {
            return fail(MfStatus::NullPointer, "out is null");
        }
        let Some(len) = n.checked_mul(3) else {
            return fail(MfStatus::InvalidArgument, "server count overflows");
        };
        let (Some(util), Some(capacity)) = (slice(util, len), slice(capacity, len)) else {
            return fail(MfStatus::NullPointer, "null data pointer");
        };
        let result = (|| {
            let w = match slice(weights, if weights.is_null() { 0 } else { 3 }) {
                Some([a, b, c]) => Weights::new(*a, *b, *c)?,
                _ => Weights::default(),
            };
            let mut snaps = Vec::with_capacity(n);
            for (i, (u, k)) in util.chunks_exact(3).zip(capacity.chunks_exact(3)).enumerate() {
                let u = Resources::new(u[0], u[1], u[2]);
                let k = Resources::new(k[0], k[1], k[2]);
                if !u.all(|v| (0.0..=1.0).contains(&v)) || !k.all(|v| v > 0.0 && v.is_finite()) {
                    return Err(Error::Parameter(format!(
                        "server {i}: utilization must be in [0, 1] and capacity positive"
                    )));
                }
                snaps.push(ServerSnapshot::from_util(ServerId(i as u32), k, u));
            }
            cluster_imbalance(&snaps, &w)
        })();
        match result {
            Ok(v) => {
                *out = v;
                MfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Default two-cluster scenario (H 0.9, delta-h 4, min_imbalance, 500 s).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_default(out: *mut *mut MfScenario) -> MfStatus {
    guard(|| {
        if out.is_null() {
            return fail(MfStatus::NullPointer, "out is null");
        }
        *out = into_handle(MfScenario(Scenario::default()));
        MfStatus::Ok
    })
}

/// Builds a scenario from TOML configuration text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_from_toml(
    toml: *const c_char,
    out: *mut *mut MfScenario,
) -> MfStatus {
    guard(|| {
        if out.is_null() || toml.is_null() {
            return fail(MfStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(toml).to_str() else {
            return fail(MfStatus::Parse, "configuration is not valid UTF-8");
        };
        match RunConfig::parse(text) {
            Ok(c) => {
                *out = into_handle(MfScenario(c.scenario));
                MfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_set_seed(scenario: *mut MfScenario, seed: u64) -> MfStatus {
    guard(|| match scenario.as_mut() {
        Some(s) => {
            s.0.seed = seed;
            MfStatus::Ok
        }
        None => fail(MfStatus::NullPointer, "scenario is null"),
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_set_policy(
    scenario: *mut MfScenario,
    policy: MfPolicy,
) -> MfStatus {
    guard(|| match scenario.as_mut() {
        Some(s) => {
            s.0.policy = policy.into();
            MfStatus::Ok
        }
        None => fail(MfStatus::NullPointer, "scenario is null"),
    })
}

/// Sets the traffic target.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_set_traffic(
    scenario: *mut MfScenario,
    h: f64,
    delta_h: f64,
) -> MfStatus {
    guard(|| {
        let Some(s) = scenario.as_mut() else {
            return fail(MfStatus::NullPointer, "scenario is null");
        };
        let updated = s.0.with_cell(h, delta_h, s.0.seed);
        if let Err(e) = updated.traffic.validate() {
            return from_error(e);
        }
        s.0 = updated;
        MfStatus::Ok
    })
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_free(scenario: *mut MfScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the scenario.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_run(scenario: *const MfScenario, out: *mut *mut MfRun) -> MfStatus {
    guard(|| {
        if out.is_null() {
            return fail(MfStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(s) = scenario.as_ref() else {
            return fail(MfStatus::NullPointer, "scenario is null");
        };
        match sim::run(&s.0) {
            Ok(output) => {
                *out = into_handle(MfRun {
                    output,
                    run_length: s.0.run_length,
                });
                MfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_run_report_count(run: *const MfRun) -> usize {
    run.as_ref().map_or(0, |r| r.output.reports.len())
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_run_report(
    run: *const MfRun,
    index: usize,
    out: *mut MfReport,
) -> MfStatus {
    guard(|| {
        let Some(r) = run.as_ref() else {
            return fail(MfStatus::NullPointer, "run is null");
        };
        if out.is_null() {
            return fail(MfStatus::NullPointer, "out is null");
        }
        match r.output.reports.get(index) {
            Some(rep) => {
                *out = MfReport {
                    t: rep.t,
                    imb_cpu: rep.per_resource.cpu,
                    imb_ram: rep.per_resource.ram,
                    imb_net: rep.per_resource.net,
                    imb_tot: rep.imb_tot,
                };
                MfStatus::Ok
            }
            None => fail(MfStatus::OutOfRange, format!("report {index} out of range")),
        }
    })
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_run_summary(run: *const MfRun, out: *mut MfSummary) -> MfStatus {
    guard(|| {
        let Some(r) = run.as_ref() else {
            return fail(MfStatus::NullPointer, "run is null");
        };
        if out.is_null() {
            return fail(MfStatus::NullPointer, "out is null");
        }
        let s = &r.output.summary;
        *out = MfSummary {
            equilibrium_time: s.equilibrium_time.unwrap_or(r.run_length),
            censored: s.equilibrium_time.is_none(),
            imb_tot_final: s.imb_tot_final,
            efficiency: s.efficiency,
            processing_period_system: s.processing_period_system,
            completed: s.completed,
        };
        MfStatus::Ok
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_run_free(run: *mut MfRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

//! Multifractal arrival-intensity traces and their materialization into requests.
//!
//! A trace is a cascade measure (heterogeneity, delta-h) multiplied by the
//! exponential of fractional Gaussian noise (long memory, H), scaled to mean 1.
//! The shape knobs are calibrated against the MFDFA estimator until both
//! targets are met.

mod calibrate;
pub mod cascade;
pub mod fgn;
pub mod requests;

use std::path::Path;

use crate::error::{Error, Result};
use crate::fractal::{estimate_hurst_curve, HurstCurve, QGrid, ScaleGrid};

pub use calibrate::{MAX_ATTEMPTS, MAX_ITERATIONS};
pub use cascade::{deterministic_cascade, generate_cascade, CascadeParams};
pub use fgn::generate_fgn;
pub use requests::{
    materialize_requests, read_requests_csv, write_requests_csv, ArrivalModel, ClassId, FlowClass,
    Request, RequestId,
};

/// Generation target.
#[derive(Debug, Clone, PartialEq)]
pub struct MultifractalSpec {
    pub target_h: f64,
    pub target_delta_h: f64,
    /// Number of slots; a power of two, at least 2^12.
    pub length: usize,
    /// Seconds per slot.
    pub slot_duration: f64,
    pub seed: u64,
    /// Moment orders over which delta-h is measured.
    pub q: QGrid,
}

impl MultifractalSpec {
    pub const MIN_LENGTH: usize = 1 << 12;
    pub const DEFAULT_LENGTH: usize = 1 << 14;
    pub const DEFAULT_SLOT_DURATION: f64 = 1.0 / 32.0;

    pub fn new(target_h: f64, target_delta_h: f64, seed: u64) -> Self {
        MultifractalSpec {
            target_h,
            target_delta_h,
            length: Self::DEFAULT_LENGTH,
            slot_duration: Self::DEFAULT_SLOT_DURATION,
            seed,
            q: QGrid::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_h > 0.0 && self.target_h < 1.0) {
            return Err(Error::param(format!("target H {} outside (0, 1)", self.target_h)));
        }
        if !(self.target_delta_h >= 0.0 && self.target_delta_h.is_finite()) {
            return Err(Error::param(format!(
                "target delta_h {} must be a finite value >= 0",
                self.target_delta_h
            )));
        }
        if self.length < Self::MIN_LENGTH || !self.length.is_power_of_two() {
            return Err(Error::param(format!(
                "trace length {} must be a power of two >= {}",
                self.length,
                Self::MIN_LENGTH
            )));
        }
        if !(self.slot_duration > 0.0 && self.slot_duration.is_finite()) {
            return Err(Error::param("slot duration must be positive"));
        }
        Ok(())
    }

    /// Accepted deviation from (target H, target delta-h).
    pub fn tolerance(&self) -> [f64; 2] {
        [0.05, (0.2 * self.target_delta_h).max(0.15)]
    }

    pub fn duration(&self) -> f64 {
        self.length as f64 * self.slot_duration
    }
}

/// Generator parameters that produced a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSettings {
    pub base_h: f64,
    pub active_fraction: f64,
    pub weight_spread: f64,
    /// Standard deviation of the log-intensity modulation.
    pub modulation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTrace {
    /// Relative arrival intensity per slot, mean 1.
    pub slots: Vec<f64>,
    pub slot_duration: f64,
    pub achieved: HurstCurve,
    pub delta_h: f64,
    pub settings: Option<GeneratorSettings>,
}

impl TrafficTrace {
    /// Wraps slots and measures them with the default scale grid.
    pub fn measured(
        slots: Vec<f64>,
        slot_duration: f64,
        q: &QGrid,
        settings: Option<GeneratorSettings>,
    ) -> Result<Self> {
        if slots.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::param("trace intensities must be finite and nonnegative"));
        }
        let achieved = estimate_hurst_curve(&slots, q, &ScaleGrid::for_length(slots.len())?)?;
        Ok(TrafficTrace {
            delta_h: achieved.delta_h,
            slots,
            slot_duration,
            achieved,
            settings,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_trace_csv(path, &self.slots)
    }
}

/// Generates a trace whose measured h(2) and delta-h fall within
/// [`MultifractalSpec::tolerance`] of the targets.
pub fn generate_traffic(spec: &MultifractalSpec) -> Result<TrafficTrace> {
    spec.validate()?;
    calibrate::calibrate(spec)
}

pub fn write_trace_csv(path: &Path, slots: &[f64]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["slot", "intensity"]).map_err(io)?;
    for (i, v) in slots.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `slot,intensity` CSV. Slots must appear in order starting at 0.
pub fn read_trace_csv(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["slot", "intensity"] {
        return Err(parse_err(1, "expected header `slot,intensity`".into()));
    }
    let mut slots = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let index: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad slot index `{}`", &record[0])))?;
        if index != slots.len() {
            return Err(parse_err(line, format!("expected slot {}, found {index}", slots.len())));
        }
        let value: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad intensity `{}`", &record[1])))?;
        if !(value >= 0.0 && value.is_finite()) {
            return Err(parse_err(line, format!("intensity {value} is negative or non-finite")));
        }
        slots.push(value);
    }
    Ok(slots)
}

use std::path::PathBuf;

use thiserror::Error;

use crate::traffic::TrafficTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument is outside its domain (H outside (0,1), bad weights, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Cluster, class or scenario configuration is unusable.
    #[error("invalid configuration: {0}")]
    Configuration(String),

    /// Not enough data to compute the requested statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Input is structurally valid but carries no information (e.g. a constant series).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The generator could not reach its (H, delta-h) target; carries the best trace found.
    #[error(
        "calibration failed after {iterations} iterations: achieved h(2)={:.4}, delta_h={:.4}",
        .best.achieved.h_at(2.0).unwrap_or(f64::NAN),
        .best.achieved.delta_h
    )]
    Calibration {
        iterations: usize,
        best: Box<TrafficTrace>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Process exit status for this error: 1 validation or parse, 2 I/O, 3 calibration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Calibration { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Configuration(msg.into())
    }
}

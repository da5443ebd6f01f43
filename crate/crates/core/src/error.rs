use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("curve {curve}: empty curve")]
    EmptyCurve { curve: String },

    #[error("curve {curve}: non-galvanostatic current (coefficient of variation {cv:.4})")]
    NonGalvanostatic { curve: String, cv: f64 },

    #[error("curve {curve}: time decreases at rows {indices:?}")]
    NonMonotoneTime { curve: String, indices: Vec<usize> },

    #[error("duplicate cell id {0}")]
    DuplicateCell(String),

    #[error("too short: {0}")]
    TooShort(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("curve never reaches lower voltage {v_l} V")]
    LowerVoltageNotReached { v_l: f64 },

    #[error("range not covered: maximum reachable voltage {max_reachable} V")]
    RangeNotCovered { max_reachable: f64 },

    #[error("voltage is not monotone over the segment: {0}")]
    NotMonotone(String),

    #[error("covariance factorization failed after jitter escalation")]
    Factorization,

    #[error("non-finite negative log marginal likelihood at initialization")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: need at least {need} samples, got {got}")]
    InsufficientData { need: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("nonpositive true capacity {0}")]
    NonPositiveTruth(f64),

    #[error("fold {cell}: training set empty after range exclusions")]
    EmptyTrainingSet { cell: String },

    #[error("model file: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

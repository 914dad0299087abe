use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice size {0}: L must be at least 1")]
    InvalidSize(i64),

    #[error("Levin-Wen partition needs L to be a multiple of 5, got L={0}")]
    UnsupportedPartition(usize),

    #[error("anyon path of length {length} does not fit a lattice with L={size}")]
    PathTooLong { length: usize, size: usize },

    #[error("bond configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value during contraction: {0}")]
    NumericalOverflow(String),

    #[error("contraction below truncation resolution: {0}")]
    BelowResolution(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("inconsistent runs: {0}")]
    InconsistentRuns(String),

    #[error("no crossing between L={0} and L={1} in the shared temperature range")]
    NoCrossing(usize, usize),

    #[error("curves for L={0} and L={1} coincide on the shared temperature range")]
    DegenerateCrossing(usize, usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit failed: {message} (best loss {best_loss:.3e})")]
    FitFailed {
        message: String,
        best_params: Vec<f64>,
        best_loss: f64,
    },

    #[error("system too large for exact enumeration: {0}")]
    TooLarge(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants split into input problems (dimension or value checks on caller
/// data) and numerical failures (singular systems, degenerate fits). The CLI
/// maps the former to data errors and the latter to numerical-failure exit
/// codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coverage level must lie in (0, 1), got {0}")]
    CoverageOutOfRange(f64),

    #[error("calibration set too small for the requested coverage: need order statistic {needed} of {available}")]
    UnboundedInterval { needed: usize, available: usize },

    #[error("too few samples: have {n}, need at least {needed}")]
    TooFewSamples { n: usize, needed: usize },

    #[error("subset enumeration limited to p <= 16 and k <= 3, got p = {p}, k = {k}")]
    SubsetGuard { p: usize, k: usize },

    #[error("singular linear system in {0}")]
    SingularSystem(&'static str),

    #[error("residual is exactly zero; noise level estimate degenerates")]
    InterpolatingFit,

    #[error("unsupported model file version {found}")]
    ModelVersion { found: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("model file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of numerical character (as opposed to malformed
    /// input), used by callers that distinguish exit codes.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::SingularSystem(_) | Error::InterpolatingFit)
    }
}

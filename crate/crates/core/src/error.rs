use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input")]
    NonFinite,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("Cholesky factorization failed after jitter retry (n = {n})")]
    Cholesky { n: usize },

    #[error("approximate map not admissible for identity check")]
    ApproximateFeatureMap,

    #[error("index {index} outside block of length {len}")]
    OutsideBlock { index: usize, len: usize },

    #[error(
        "instance too large for exhaustive search: {candidates}^{t} multisets exceeds {limit}"
    )]
    InstanceTooLarge {
        candidates: usize,
        t: usize,
        limit: usize,
    },

    #[error("functions do not share a center basis")]
    MismatchedCenters,

    #[error("schedule infeasible: {0}")]
    InfeasibleSchedule(String),

    #[error("generated sequence violates its declared bounds: {0}")]
    BudgetViolated(String),

    #[error("time step {t} beyond horizon {horizon}")]
    BeyondHorizon { t: usize, horizon: usize },

    #[error("empty candidate grid")]
    EmptyGrid,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    /// A coefficient that is singular at the schedule endpoint was requested there.
    #[error("coefficient undefined at endpoint t = {t}")]
    Endpoint { t: f64 },

    #[error("sample-dependent basis requires a (clean, degraded) conditioning pair")]
    MissingConditioning,

    #[error("covariance is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularCovariance { condition: f64 },

    #[error("dense covariance requested for dimension {dim}, cap is {cap}")]
    DenseTooLarge { dim: usize, cap: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("mask required for weighted noise-prediction loss")]
    MissingMask,

    #[error("non-finite loss {loss} at training step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("domain transform requires strictly positive values (min {min})")]
    NonPositive { min: f64 },

    #[error("unknown suite `{0}`")]
    UnknownSuite(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

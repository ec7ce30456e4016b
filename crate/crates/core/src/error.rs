use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state point has non-finite coordinate {index}: {value}")]
    NonFinite { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("trajectory left the chart on axis {axis}: {value} outside [{lower}, {upper}]")]
    DomainExit {
        axis: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e}, tol {tol:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("set is not absorbed: {0}")]
    NotAbsorbed(String),

    #[error(
        "ambiguous point-map recovery at {point:?}: candidates {first:?} and {second:?} both match"
    )]
    Ambiguous {
        point: Vec<f64>,
        first: Vec<f64>,
        second: Vec<f64>,
    },

    #[error("empty ideal basis requested")]
    EmptyBasis,

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

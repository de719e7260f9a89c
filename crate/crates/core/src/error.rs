use thiserror::Error;

/// Errors raised by the analysis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("mean is undefined for shape xi = {0} (requires xi < 1)")]
    UndefinedMean(f64),

    #[error("variance is undefined for shape xi = {0} (requires xi < 0.5)")]
    UndefinedVariance(f64),

    #[error("fit infeasible: {0}")]
    FitInfeasible(String),

    #[error("objective is non-finite at every start")]
    NonFiniteObjective,

    #[error("invalid changepoint configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("bootstrap interval unreliable: {failed} of {total} replicate fits failed")]
    IntervalUnreliable { failed: usize, total: usize },

    #[error("matrix is numerically singular: {0}")]
    Singular(String),

    #[error("station mismatch: {0} vs {1}")]
    StationMismatch(String, String),

    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

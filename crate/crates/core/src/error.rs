use thiserror::Error;

/// Errors raised by the numerical library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("invalid covariance: {0}")]
    Covariance(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("accuracy error: {0}")]
    Accuracy(String),
    #[error("truncation error: {0}")]
    Truncation(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("admissibility error: {0}")]
    Admissibility(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit did not converge after {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        best: Box<crate::fitting::FitResult>,
    },

    #[error("degenerate record: {0}")]
    DegenerateRecord(String),

    #[error(
        "decomposition inconsistency: weight<=2 leakage {leakage:.3e} exceeds {tolerance:.1e}"
    )]
    DecompositionInconsistency { leakage: f64, tolerance: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

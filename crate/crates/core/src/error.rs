use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate link function: {0}")]
    DegenerateLink(String),

    #[error("resource limit exceeded: {what} needs {requested} entries, limit is {limit}")]
    ResourceLimit {
        what: &'static str,
        requested: u128,
        limit: u128,
    },

    #[error("degenerate retraction step: norm of w + eta*v is {0:e}")]
    DegenerateStep(f64),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("alignment collapsed to {alpha} at step {step}")]
    AlignmentCollapse { step: u64, alpha: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

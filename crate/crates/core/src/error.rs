use thiserror::Error;

/// Errors produced by the engine and its backends.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    Dimension {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("backend capacity exceeded: {0}")]
    Capacity(String),

    #[error("text too long for backend: {len} > {limit} bytes")]
    TextTooLong { len: usize, limit: usize },

    #[error("generation limit exceeded: requested {requested} steps, limit {limit}")]
    GenerationLimit { requested: usize, limit: usize },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

use thiserror::Error;

/// Error taxonomy shared by every module in this crate.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A caller-supplied value violates a precondition (shape, range, format).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// An operation was requested in an order the API does not allow.
    #[error("invalid state: {0}")]
    InvalidState(String),
    /// Input is structurally valid but numerically degenerate (e.g. rank-deficient).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    /// The traced computation contains a primitive the engine cannot differentiate.
    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),
    /// A computation produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CoreError {
    CoreError::InvalidArgument(msg.into())
}

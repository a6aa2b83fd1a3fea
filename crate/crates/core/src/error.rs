use thiserror::Error;

/// Errors raised by samplers, the hitting-time engine and the simulators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A query needed a hitting time beyond the solved horizon.
    #[error("value {value} exceeds certified horizon {horizon}")]
    HorizonExceeded { value: f64, horizon: f64 },

    #[error("accuracy check failed: {0}")]
    Accuracy(String),

    #[error("environment mismatch: {0}")]
    InvalidPairing(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_params(msg: impl Into<String>) -> Error {
    Error::InvalidParameters(msg.into())
}

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

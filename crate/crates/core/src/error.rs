use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported parameter: {0}")]
    UnsupportedParameter(String),
    #[error("degenerate state: {0}")]
    DegenerateState(String),
    #[error("newton iteration did not converge: {0}")]
    NewtonDivergence(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("extension failure: {0}")]
    CrossingCharacteristics(String),
    #[error("unnormalized input: {0}")]
    Unnormalized(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal consistency check failed: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("enumeration refused: {predicted} candidate supports exceed the limit of {limit}")]
    EnumerationTooLarge { predicted: f64, limit: u64 },

    #[error("infeasible parameters: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("checksum failure: {0}")]
    Checksum(String),

    #[error("corrupt record: {0}")]
    Corrupt(String),

    #[error("truncated input: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("insufficient open-set pool: need {needed} vectors, have {available}")]
    InsufficientPool { needed: usize, available: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("loss is not connected to any parameter")]
    Disconnected,

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

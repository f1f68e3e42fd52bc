//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid cluster count {k} for {n} points")]
    InvalidClusterCount { k: usize, n: usize },

    #[error("sample size {requested} exceeds population {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("invalid device id {id} (device count {count})")]
    InvalidDeviceId { id: usize, count: usize },

    #[error("retry budget exhausted: {0}")]
    RetriesExhausted(String),

    #[error("cardinality history incomplete: need steps {need_from}..={need_to}, have {have}")]
    IncompleteHistory {
        need_from: usize,
        need_to: usize,
        have: usize,
    },

    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// Failures while decoding the binary dataset container format.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic 0x{0:08x}")]
    BadMagic(u32),

    #[error("truncated payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },

    #[error("dimension product overflows: {0:?}")]
    DimensionOverflow(Vec<u32>),

    #[error("{trailing} trailing bytes after payload")]
    TrailingBytes { trailing: usize },
}

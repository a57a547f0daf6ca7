use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid token id {0}")]
    InvalidToken(u32),
    #[error("context full: {needed} positions needed, capacity {capacity}")]
    ContextFull { needed: usize, capacity: usize },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("too few samples: {0} (need at least 2)")]
    TooFewSamples(usize),
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("model is already quantized")]
    AlreadyQuantized,
    #[error("checksum mismatch: expected {expected}, got {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("disk full")]
    DiskFull,
    #[error("calendar payload has no '/' separator")]
    MalformedCalendar,
    #[error("bad calendar datetime `{0}`")]
    BadDateTime(String),
    #[error("session is busy")]
    Busy,
    #[error("session is not busy")]
    NotBusy,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        // ENOSPC
        if err.raw_os_error() == Some(28) {
            Error::DiskFull
        } else {
            Error::Io(err)
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the link, from tensor shape checks to file parsing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gradient error: {0}")]
    Gradient(String),

    #[error("magic mismatch: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    VersionMismatch { found: u16, supported: u16 },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("wrong checkpoint stage: expected {expected}, found {found}")]
    WrongStage { expected: u8, found: u8 },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }

    /// True for failures of the filesystem itself, as opposed to bad contents.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::File { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

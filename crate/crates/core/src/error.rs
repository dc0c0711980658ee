use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },

    #[error("{path}: cannot decode image: {cause}")]
    Decode { path: PathBuf, cause: String },

    #[error("{path}: cannot encode image: {cause}")]
    Encode { path: PathBuf, cause: String },

    #[error("{path}: image has zero size")]
    EmptyImage { path: PathBuf },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("autodiff: {0}")]
    Graph(String),

    #[error("checkpoint: bad magic {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("checkpoint: unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: truncated file ({0})")]
    Truncated(String),

    #[error("checkpoint: parameter {index} has shape {found:?}, model expects {expected:?}")]
    CheckpointShape {
        index: usize,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("dataset: {0}")]
    Dataset(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }
}

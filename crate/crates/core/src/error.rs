use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no frames matched {pattern:?} in {dir}")]
    NoFrames { dir: PathBuf, pattern: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-occlusion mask is empty")]
    EmptyMask,

    #[error("frame {height}×{width} too small for block {block} (needs at least {min}×{min})")]
    FrameTooSmall {
        height: usize,
        width: usize,
        block: String,
        min: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("window too short: {0}")]
    WindowTooShort(String),

    #[error("missing flow from frame {target} to frame {source_frame} (1-based)")]
    MissingFlow { target: usize, source_frame: usize },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid configuration: {0}")]
    Spec(String),

    #[error("video triplet has no output sequence")]
    MissingOutput,

    #[error("non-finite loss: {terms}")]
    NonFiniteLoss { terms: String },

    #[error("invalid file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid value: {0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

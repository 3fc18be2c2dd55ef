//! Error types shared across the pipeline.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An operation was called in the wrong order (e.g. backward before forward).
    #[error("invalid state: {0}")]
    State(String),

    /// Input data failed validation (index rows, label values, report inputs).
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// A raster file could not be decoded into 8-bit RGB(A).
    #[error("{path}: {detail}")]
    ImageRead { path: PathBuf, detail: String },

    /// The file does not start with the weight-file magic.
    #[error("bad magic: not a weight file")]
    BadMagic,

    #[error("weight file CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("weight file truncated: {0}")]
    Truncated(String),

    #[error("unsupported weight file version {0}")]
    UnsupportedVersion(u32),

    /// A weight entry exists under the right name but with the wrong shape.
    #[error("shape conflict for '{name}': file has {file:?}, model expects {model:?}")]
    ShapeConflict {
        name: String,
        file: Vec<usize>,
        model: Vec<usize>,
    },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

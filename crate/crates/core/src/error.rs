use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the registration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dimension: grid dims {0:?} must all be >= 1")]
    EmptyDimension([usize; 3]),
    #[error("voxel count overflow for dims {0:?}")]
    DimensionOverflow([usize; 3]),
    #[error("invalid spacing {0:?}: all components must be finite and > 0")]
    InvalidSpacing([f64; 3]),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("data length {got} does not match voxel count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unknown label {requested}; known labels: {known:?}")]
    UnknownLabel { requested: u8, known: Vec<u8> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical abort in stage '{stage}' at iteration {iteration}: {detail}")]
    NumericalAbort {
        stage: String,
        iteration: usize,
        detail: String,
    },
    #[error("nifti: {message} (offset {offset})")]
    Nifti { message: String, offset: usize },
    #[error("unsupported nifti datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("orientation: {0}")]
    Orientation(String),
    #[error("config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn nifti(message: impl Into<String>, offset: usize) -> Self {
        Error::Nifti {
            message: message.into(),
            offset,
        }
    }
}

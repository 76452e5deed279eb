//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed annotation row: {msg}")]
    AnnotationParse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{path}:{line}: unknown class {name:?}")]
    UnknownClass {
        path: PathBuf,
        line: u64,
        name: String,
    },

    #[error("{path}:{line}: dot ({x}, {y}) outside region bounds {width}x{height}")]
    DotOutOfBounds {
        path: PathBuf,
        line: u64,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },

    #[error("class {name:?} has no annotated cells in the training data")]
    EmptyClass { name: String },

    #[error("invalid class schema: {0}")]
    Schema(String),

    #[error("invalid split fractions: {0}")]
    SplitFractions(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("malformed checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("malformed npy file {path}: {msg}")]
    Npy { path: PathBuf, msg: String },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

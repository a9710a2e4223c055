//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {message}")]
    InvalidShape { op: &'static str, message: String },

    #[error("{op}: operands belong to different graphs")]
    GraphMismatch { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("backward already ran on this graph")]
    BackwardTwice,

    #[error("tensor is not attached to this graph")]
    ForeignTensor,

    #[error("label {label} at frame {frame} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        frame: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite {term} at step {step}")]
    NonFiniteLoss { step: u64, term: String },

    #[error("corpus manifest is empty")]
    EmptyCorpus,

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

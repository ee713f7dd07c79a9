use std::io;

/// Errors produced anywhere in the segmentation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {dims:?}: {reason}")]
    InvalidShape { dims: Vec<usize>, reason: &'static str },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("format error ({key}): {message}")]
    Format { key: String, message: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(&'static str),

    #[error("non-finite loss at epoch {epoch}, case {case}")]
    NonFiniteLoss { epoch: usize, case: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format { key: key.into(), message: message.into() }
    }

    pub(crate) fn mismatch(expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch { expected: expected.to_vec(), actual: actual.to_vec() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

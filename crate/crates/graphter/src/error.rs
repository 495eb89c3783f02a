use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{op}: axis {axis} invalid for shape {shape:?}")]
    InvalidAxis { op: &'static str, axis: usize, shape: Vec<usize> },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("tape already consumed by backward; run a new forward pass first")]
    TapeConsumed,

    #[error("{context}: non-finite value encountered")]
    NonFinite { context: String },

    #[error("unknown op '{0}'")]
    UnknownOp(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Runtime(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

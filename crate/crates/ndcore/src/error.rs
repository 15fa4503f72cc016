use thiserror::Error;

#[derive(Debug, Error)]
pub enum NdError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("degenerate embedding: zero-norm vector")]
    DegenerateEmbedding,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NdError {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        NdError::Invalid { op, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, NdError>;

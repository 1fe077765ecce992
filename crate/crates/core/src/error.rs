use thiserror::Error;

/// Errors produced by the depth-completion operators and the model.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch { op: &'static str, expected: Vec<usize>, got: Vec<usize> },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{what}: non-finite value encountered")]
    NonFinite { what: String },

    #[error("{op}: missing or stale forward context ({msg})")]
    Context { op: &'static str, msg: String },

    #[error("training diverged at step {step}; parameters restored to the last good checkpoint")]
    Diverged { step: u64 },

    #[error("png: {0}")]
    Png(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch { op, expected: expected.to_vec(), got: got.to_vec() }
    }

    pub(crate) fn context(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Context { op, msg: msg.into() }
    }
}

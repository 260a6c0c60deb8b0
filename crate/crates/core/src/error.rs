use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Grid too small for a 3-point stencil, or otherwise ill-sized.
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite values in {context}: {count} offending cells")]
    NonFinite { context: String, count: usize },

    #[error("rollout became unstable at step {step} ({cells} non-finite cells)")]
    Unstable { step: usize, cells: usize },

    #[error("NaN or infinity produced by graph node {node} ({op})")]
    NanInGraph { node: usize, op: &'static str },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("loss node {node} is not scalar (dims {dims:?})")]
    NonScalarLoss { node: usize, dims: [usize; 4] },

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("model not trained: {0}")]
    Untrained(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn mismatch(
    context: impl Into<String>,
    expected: impl std::fmt::Debug,
    actual: impl std::fmt::Debug,
) -> Error {
    Error::ShapeMismatch {
        context: context.into(),
        expected: format!("{expected:?}"),
        actual: format!("{actual:?}"),
    }
}

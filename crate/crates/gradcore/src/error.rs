use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("{op}: {reason}")]
    Domain { op: &'static str, reason: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward already ran on this graph; graphs are not retained across backward calls")]
    GraphConsumed,

    #[error("non-finite value produced by `{op}` (finite checking enabled)")]
    NonFinite { op: &'static str },

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("parameter `{0}` is already registered")]
    DuplicateParam(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("gradient check failed on `{param}`: {reason}")]
    FdFailure { param: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

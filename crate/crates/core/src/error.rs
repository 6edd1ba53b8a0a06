use thiserror::Error;

/// Errors produced by tensor kernels.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("cannot broadcast shapes {lhs:?} and {rhs:?}")]
    BroadcastError { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("batch dimension mismatch: {lhs:?} vs {rhs:?}")]
    BatchMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("slice {range:?} out of bounds for axis {axis} of extent {extent}")]
    SliceOutOfBounds {
        axis: usize,
        range: (usize, usize),
        extent: usize,
    },
    #[error("{op}: domain error ({reason})")]
    Domain { op: &'static str, reason: String },
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("invalid tensor encoding: {0}")]
    Decode(String),
}

/// Errors produced by the autodiff tape.
#[derive(Debug, Error)]
pub enum AdError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("seed shape {seed:?} does not match output shape {out:?}")]
    SeedShape { seed: Vec<usize>, out: Vec<usize> },
    #[error("primitive `{0}` is not registered")]
    UnregisteredPrimitive(String),
    #[error("primitive `{name}` expects {expected} operands, got {actual}")]
    Arity {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("variables belong to different tapes")]
    TapeMismatch,
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    Vocabulary { id: usize, vocab: usize },
    #[error("{op}: {reason}")]
    Contract { op: &'static str, reason: String },
}

use ferrograd_core::{AdError, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parameter name `{0}` is already taken")]
    DuplicateParam(String),
    #[error("{layer}: width mismatch, expected {expected} got {actual}")]
    WidthMismatch {
        layer: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    Vocabulary { id: usize, vocab: usize },
    #[error("{0}")]
    Config(String),
    #[error("batch statistics need at least 2 rows in train mode, got {0}")]
    BatchTooSmall(usize),
    #[error("degenerate node {node}: degree is zero")]
    DegenerateNode { node: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

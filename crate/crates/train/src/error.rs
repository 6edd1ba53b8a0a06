use ferrograd_core::{AdError, TensorError};
use ferrograd_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("class index {index} out of range for {classes} classes")]
    BadClassIndex { index: usize, classes: usize },
    #[error("{0}")]
    Config(String),
    #[error("system is singular or badly conditioned (pivot {pivot:.3e}); try a ridge term λ > 0")]
    IllConditioned { pivot: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

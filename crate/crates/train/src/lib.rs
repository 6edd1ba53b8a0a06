//! Losses, optimizers, regularization, data pipeline, calibration, and
//! closed-form estimators.

pub mod calibrate;
pub mod data;
pub mod earlystop;
pub mod error;
pub mod estimate;
pub mod loss;
pub mod metrics;
pub mod optim;

pub use error::TrainError;

//! Dense f64 tensors plus a tape-based reverse-mode autodiff engine with a
//! forward-mode cross-check and a finite-difference oracle.

pub mod check;
pub mod error;
pub mod ops;
pub mod registry;
pub mod tape;
pub mod tensor;

pub use error::{AdError, TensorError};
pub use ops::Reduction;
pub use tape::{GradientStore, ParamId, Tape, Var};
pub use tensor::{broadcast_shapes, Tensor};

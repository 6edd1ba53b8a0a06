//! Layer catalog over the tape engine: dense blocks, convolutions,
//! attention, graph layers, and recurrent/state-space models.

pub mod act;
pub mod attention;
pub mod checkpoint;
pub mod checks;
pub mod conv;
pub mod error;
pub mod graph;
pub mod layers;
pub mod param;
pub mod recurrent;

pub use act::{Activation, ActivationOps};
pub use error::NnError;
pub use param::{ParamSet, Parameter};

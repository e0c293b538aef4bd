//! Minimal reverse-mode autodiff on flat f64 buffers.
//!
//! [`tape::Tape`] records elementary operations (matmul, softmax, layer
//! norm, ...) as they execute and replays them backwards to accumulate
//! gradients. Model parameters live in a [`ParamStore`] and are borrowed by
//! the tape zero-copy; a fresh tape is built per forward pass.
//!
//! Numerics are f64 throughout — small models, and it keeps the
//! finite-difference gradient gates far away from rounding noise.

pub mod adam;
pub mod encoding;
pub mod gradcheck;
pub mod layers;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use tape::{Id, Tape};
pub use tensor::{ParamStore, Tensor};

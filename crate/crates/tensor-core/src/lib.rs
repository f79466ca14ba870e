//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The kernel set is intentionally small: exactly the operations the visual
//! projectors and the toy language model need (conv2d, adaptive average
//! pooling, bilinear sampling, attention plumbing), all verifiable against
//! central finite differences via [`grad_check`].

mod error;
mod gradcheck;
pub mod ops;
mod tensor;

pub use error::TensorError;
pub use gradcheck::{grad_check, GradCheckReport};
pub use tensor::Tensor;

//! Reverse-mode automatic differentiation over row-major `f64` tensors.
//!
//! Every op records a node only when gradients are enabled on the current
//! thread and at least one input requires a gradient. Reductions iterate in
//! a fixed order, so results are bit-reproducible for identical inputs.

mod conv;
mod gradcheck;
mod linalg;
mod ops;
mod tensor;

pub use gradcheck::{gradient_check, max_relative_error, numerical_gradient};
pub use tensor::{is_grad_enabled, no_grad, Tensor};

/// Additive bias used to exclude attention positions.
pub const MASK_BIAS: f64 = -1e9;

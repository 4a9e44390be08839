//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records each primitive op with the values its vector-Jacobian
//! product needs. One tape serves one forward/backward pass.

mod gradcheck;
mod suite;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, finite_difference_check_coords};
pub use suite::primitive_gradient_errors;
pub use tape::{softmax, Gradients, Tape, Var, LEAKY_SLOPE};
pub use tensor::Tensor;

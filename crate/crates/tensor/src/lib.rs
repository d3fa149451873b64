//! Deterministic dense tensors with tape-based reverse-mode automatic
//! differentiation, sized for small CNN and VAE training on the CPU.

mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod prng;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Binary, Gradients, Graph, Reduce, Unary, Var, OP_NAMES};
pub use prng::Prng;
pub use scalar::Scalar;
pub use tensor::Tensor;

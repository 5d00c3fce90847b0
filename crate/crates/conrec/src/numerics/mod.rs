//! Differentiable tensor core: forward kernels, a reverse-mode tape, and a
//! finite-difference gradient checker.
//!
//! Training runs in f32; every kernel is also instantiated at f64 so gradient
//! checks can be made tight.

pub mod gradcheck;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use ops::Padding;
pub use scalar::Scalar;
pub use tape::{GradientTape, Gradients, Var};
pub use tensor::Tensor;

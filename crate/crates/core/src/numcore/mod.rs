//! Dense tensors and a tape-based reverse-mode autodiff engine.
//!
//! Kernels run single-threaded with a fixed loop order, so results are
//! bitwise reproducible for identical inputs.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod real;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{AttentionShape, Gradients, Graph, Var, LAYER_NORM_EPS};
pub use real::Real;
pub use tensor::Tensor;

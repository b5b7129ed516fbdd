//! Dense tensors, forward primitives and reverse-mode autodiff.

pub mod gradcheck;
pub mod graph;
pub mod memory;
pub mod ops;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, Sampling};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

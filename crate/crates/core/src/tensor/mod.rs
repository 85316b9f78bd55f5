//! Dense `f64` tensors and a tape-based reverse-mode differentiator.

mod gradcheck;
mod graph;
mod kernels;
mod value;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck};
pub use graph::{Graph, Var};
pub use value::Tensor;

/// Additive fill used to block attention entries before a softmax.
pub const MASK_FILL: f64 = -1e30;

#[cfg(test)]
mod tests;

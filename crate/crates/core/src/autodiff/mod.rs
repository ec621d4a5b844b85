//! Reverse-mode differentiation over dense matrices.

mod check;
mod graph;
mod kernels;
mod tensor;

pub use check::{finite_diff_check, FdReport, ParamReport};
pub use graph::{sigmoid, softplus, BatchStats, Graph, Mode, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;

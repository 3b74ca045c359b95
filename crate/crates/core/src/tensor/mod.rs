//! Dense matrices and a small reverse-mode autodiff tape.

mod gradcheck;
mod graph;
mod matrix;
mod optim;

pub use gradcheck::gradient_discrepancy;
pub use graph::{Gradients, Graph, Var};
pub use matrix::{clip_scalar, lp_norm, Matrix};
pub use optim::{sgd_step, Adam, Optimizer, OptimizerKind};


#[cfg(test)]
mod tests;

//! Offline multi-agent reinforcement learning with set-transformer function
//! classes.
//!
//! The crate is layered bottom-up: [`tensor`] provides matrices and a
//! reverse-mode tape, [`networks`] builds the permutation-aware models on
//! top of it, [`bounds`] evaluates and stress-tests the Lipschitz and
//! generalization formulas, [`env`] simulates cooperative navigation,
//! [`offline`] holds datasets and Bellman losses, and [`model_free`] /
//! [`model_based`] are the two pessimistic learners. [`approx_gap`] contains
//! the attention-versus-deep-sets width experiment.

// Negated comparisons are how NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx_gap;
pub mod bounds;
pub mod env;
pub mod error;
pub mod model_based;
pub mod model_free;
pub mod networks;
pub mod offline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Matrix, Var};

//! Achieved Bellman error of a trained critic next to the guarantees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{gen_bound_model_free, prescribed_bellman_budget, subopt_bound_model_free, BoundInputs};
use crate::error::Result;
use crate::networks::{JointPolicy, ValueNetwork};
use crate::offline::{bellman_error, next_supports, ActionExpectation, Dataset, InnerSearch};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    /// Transitions drawn (with replacement) to estimate the Bellman error; 0 uses the whole dataset.
    pub sample: usize,
    pub inner: InnerSearch,
    pub expectation: ActionExpectation,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { sample: 1024, inner: InnerSearch::default(), expectation: ActionExpectation::default(), seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PessimismReport {
    pub transitions: usize,
    pub bellman_loss: f64,
    /// `L(f, f, π) − min L(f̃, f, π)` over the searched `f̃`.
    pub achieved_error: f64,
    /// `3ε_F/2 + 2e/n`.
    pub prescribed_epsilon: f64,
    /// The generalization term `e`.
    pub generalization: f64,
    pub suboptimality: f64,
    pub within_prescribed: bool,
}

/// Deterministic in its arguments: the transition sample and the action
/// supports come from `opts.seed`.
pub fn pessimism_report<V: ValueNetwork, P: JointPolicy + ?Sized>(
    f: &V,
    policy: &P,
    dataset: &Dataset,
    inputs: &BoundInputs,
    opts: &ReportOptions,
) -> Result<PessimismReport> {
    dataset.require_nonempty()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let batch = if opts.sample == 0 { dataset.transitions.iter().collect() } else { dataset.sample_batch(opts.sample, &mut rng) };
    let supports = next_supports(policy, &batch, opts.expectation, &mut rng);
    let (err, _) = bellman_error(f, &batch, &supports, inputs.gamma, dataset.meta.n_actions, opts.inner)?;
    let prescribed_epsilon = prescribed_bellman_budget(inputs)?;
    Ok(PessimismReport {
        transitions: batch.len(),
        bellman_loss: err.self_loss,
        achieved_error: err.error,
        prescribed_epsilon,
        generalization: gen_bound_model_free(inputs)?,
        suboptimality: subopt_bound_model_free(inputs)?,
        within_prescribed: err.error <= prescribed_epsilon,
    })
}

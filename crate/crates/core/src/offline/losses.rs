//! Squared Bellman loss and Bellman error over transition batches.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{joint_input, JointPolicy, ValueNetwork};
use crate::tensor::{Graph, Matrix, Var};

use super::Transition;

/// How `f(S′, π) = E_{A∼π}[f(S′, A)]` is formed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionExpectation {
    /// Sampled joint actions when enumeration is too large.
    pub samples: usize,
    /// Enumerate all joint actions when their count is at most this.
    pub exact_limit: usize,
}

impl Default for ActionExpectation {
    fn default() -> Self {
        Self { samples: 4, exact_limit: 125 }
    }
}

/// Weighted joint actions standing in for the policy's action distribution.
pub type Support = Vec<(Vec<usize>, f64)>;

fn joint_action_count(n_actions: usize, agents: usize) -> Option<usize> {
    (0..agents).try_fold(1usize, |acc, _| acc.checked_mul(n_actions))
}

/// All joint actions with positive probability, weighted by `Πᵢ π(aᵢ|sᵢ)`.
pub fn enumerate_support<P: JointPolicy + ?Sized>(policy: &P, state: &Matrix) -> Support {
    let probs = policy.probs(state);
    let (n, k) = (probs.rows(), probs.cols());
    let mut out: Support = vec![(Vec::with_capacity(n), 1.0)];
    for i in 0..n {
        let mut next = Vec::with_capacity(out.len() * k);
        for (prefix, w) in &out {
            for a in 0..k {
                let p = probs.get(i, a);
                if p > 0.0 {
                    let mut acts = prefix.clone();
                    acts.push(a);
                    next.push((acts, w * p));
                }
            }
        }
        out = next;
    }
    out
}

pub fn sample_support<P: JointPolicy + ?Sized>(policy: &P, state: &Matrix, k: usize, rng: &mut dyn RngCore) -> Support {
    (0..k).map(|_| (policy.sample(state, rng).0, 1.0 / k as f64)).collect()
}

pub fn support<P: JointPolicy + ?Sized>(
    policy: &P,
    state: &Matrix,
    mode: ActionExpectation,
    rng: &mut dyn RngCore,
) -> Support {
    match joint_action_count(policy.n_actions(), state.rows()) {
        Some(c) if c <= mode.exact_limit => enumerate_support(policy, state),
        _ => sample_support(policy, state, mode.samples.max(1), rng),
    }
}

/// One support per transition, evaluated at the next state.
pub fn next_supports<P: JointPolicy + ?Sized>(
    policy: &P,
    batch: &[&Transition],
    mode: ActionExpectation,
    rng: &mut dyn RngCore,
) -> Vec<Support> {
    batch.iter().map(|t| support(policy, &t.next_state, mode, rng)).collect()
}

pub fn q_value<V: ValueNetwork>(f: &V, state: &Matrix, actions: &[usize], n_actions: usize) -> Result<f64> {
    f.value(&joint_input(state, actions, n_actions)?)
}

/// `f(S, π)` as the weighted mean over `support`.
pub fn support_value<V: ValueNetwork>(f: &V, state: &Matrix, support: &Support, n_actions: usize) -> Result<f64> {
    support.iter().map(|(a, w)| Ok(w * q_value(f, state, a, n_actions)?)).sum()
}

/// Monte-Carlo estimate of `f(S, π)` from `k` sampled joint actions.
pub fn expected_f<V: ValueNetwork, P: JointPolicy + ?Sized>(
    f: &V,
    state: &Matrix,
    policy: &P,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::Contract("expected_f needs at least one sample".into()));
    }
    support_value(f, state, &sample_support(policy, state, k, rng), policy.n_actions())
}

/// Exact `f(S, π)` by enumerating every joint action.
pub fn exact_expected_f<V: ValueNetwork, P: JointPolicy + ?Sized>(f: &V, state: &Matrix, policy: &P) -> Result<f64> {
    support_value(f, state, &enumerate_support(policy, state), policy.n_actions())
}

/// Graph node for `f(S, A)`.
pub fn build_q<V: ValueNetwork>(
    g: &mut Graph,
    f: &V,
    vars: &[Var],
    state: &Matrix,
    actions: &[usize],
    n_actions: usize,
) -> Result<Var> {
    let x = g.constant(joint_input(state, actions, n_actions)?);
    f.build(g, vars, x)
}

/// Graph node for the weighted sum `Σ_k w_k f(S, A_k)`.
pub fn build_support_value<V: ValueNetwork>(
    g: &mut Graph,
    f: &V,
    vars: &[Var],
    state: &Matrix,
    support: &Support,
    n_actions: usize,
) -> Result<Var> {
    let terms = support
        .iter()
        .map(|(a, w)| {
            let q = build_q(g, f, vars, state, a, n_actions)?;
            Ok(g.scale(q, *w))
        })
        .collect::<Result<Vec<_>>>()?;
    g.add_n(&terms)
}

fn require_batch(batch: &[&Transition], supports: &[Support]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Contract("Bellman loss needs a nonempty batch".into()));
    }
    if batch.len() != supports.len() {
        return Err(Error::Contract(format!("{} transitions but {} supports", batch.len(), supports.len())));
    }
    Ok(())
}

/// Regression targets `r + γ·f̃(S′, π)`.
pub fn backup_targets<V: ValueNetwork>(
    target: &V,
    batch: &[&Transition],
    supports: &[Support],
    gamma: f64,
    n_actions: usize,
) -> Result<Vec<f64>> {
    require_batch(batch, supports)?;
    batch
        .iter()
        .zip(supports)
        .map(|(t, s)| Ok(t.reward + gamma * support_value(target, &t.next_state, s, n_actions)?))
        .collect()
}

/// `L(f, f̃, π) = (1/n) Σ (f(S, A) − r − γ·f̃(S′, π))²`.
pub fn bellman_loss<V: ValueNetwork>(
    pred: &V,
    target: &V,
    batch: &[&Transition],
    supports: &[Support],
    gamma: f64,
    n_actions: usize,
) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("discount {gamma} must lie in [0, 1)")));
    }
    let y = backup_targets(target, batch, supports, gamma, n_actions)?;
    regression_loss(pred, batch, &y, n_actions)
}

/// `(1/n) Σ (f(Sᵢ, Aᵢ) − yᵢ)²`.
pub fn regression_loss<V: ValueNetwork>(f: &V, batch: &[&Transition], y: &[f64], n_actions: usize) -> Result<f64> {
    let mut total = 0.0;
    for (t, yi) in batch.iter().zip(y) {
        let e = q_value(f, &t.state, &t.actions, n_actions)? - yi;
        total += e * e;
    }
    Ok(total / batch.len() as f64)
}

/// Regression loss and its gradient with respect to every block of `f`.
pub fn regression_loss_grad<V: ValueNetwork>(
    f: &V,
    batch: &[&Transition],
    y: &[f64],
    n_actions: usize,
) -> Result<(f64, Vec<Matrix>)> {
    let mut g = Graph::new();
    let vars = f.register(&mut g, true);
    let mut terms = Vec::with_capacity(batch.len());
    for (t, yi) in batch.iter().zip(y) {
        let q = build_q(&mut g, f, &vars, &t.state, &t.actions, n_actions)?;
        let target = g.constant(Matrix::scalar(*yi));
        let e = g.sub(q, target)?;
        terms.push(g.square(e));
    }
    let sum = g.add_n(&terms)?;
    let loss = g.scale(sum, 1.0 / batch.len() as f64);
    let grads = g.backward(loss)?;
    Ok((g.scalar(loss), vars.iter().map(|v| grads.wrt(*v)).collect()))
}

/// Gradient-descent budget for the inner minimization over `f̃`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerSearch {
    pub steps: usize,
    pub lr: f64,
}

impl Default for InnerSearch {
    fn default() -> Self {
        Self { steps: 50, lr: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BellmanErrorReport {
    /// `L(f, f, π)`.
    pub self_loss: f64,
    /// Smallest `L(f̃, f, π)` among the searched candidates.
    pub best_inner_loss: f64,
    /// `self_loss − best_inner_loss`.
    pub error: f64,
    /// `L(f̃, f, π)` of every candidate, starting with `f̃ = f`.
    pub candidate_losses: Vec<f64>,
}

/// `E(f, π) = L(f, f, π) − min_{f̃} L(f̃, f, π)` with the minimum taken over a
/// gradient-descent path started at `f`. Returns the report and the best `f̃`.
///
/// The searched minimum is at least the true infimum, so the reported error
/// never exceeds the exact one and can only grow with more inner steps.
pub fn bellman_error<V: ValueNetwork>(
    f: &V,
    batch: &[&Transition],
    supports: &[Support],
    gamma: f64,
    n_actions: usize,
    inner: InnerSearch,
) -> Result<(BellmanErrorReport, V)> {
    let y = backup_targets(f, batch, supports, gamma, n_actions)?;
    let mut cand = f.clone();
    let mut best = cand.clone();
    let mut losses = Vec::with_capacity(inner.steps + 1);
    let (mut loss, mut grads) = regression_loss_grad(&cand, batch, &y, n_actions)?;
    let self_loss = loss;
    let mut best_loss = loss;
    losses.push(loss);
    for _ in 0..inner.steps {
        cand.apply_step(&grads, inner.lr);
        cand.project();
        (loss, grads) = regression_loss_grad(&cand, batch, &y, n_actions)?;
        losses.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = cand.clone();
        }
    }
    Ok((
        BellmanErrorReport { self_loss, best_inner_loss: best_loss, error: self_loss - best_loss, candidate_losses: losses },
        best,
    ))
}

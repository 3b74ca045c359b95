//! Alternating pessimistic actor-critic.
//!
//! The critic step minimizes `f(S̄₀, π) + λ·(L(f, f, π) − L(f̃, f, π))`: the
//! smallest initial value among functions with small Bellman error, so `f`
//! is pushed down wherever the data does not hold it up. The actor step
//! ascends that pessimistic value.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::NormBudget;
use crate::env::{self, EnvConfig};
use crate::error::{Error, Result};
use crate::networks::{JointPolicy, PolicyNet, ValueNetwork};
use crate::offline::{
    bellman_error, build_q, build_support_value, episode_rng, next_supports, q_value,
    support, support_value, ActionExpectation, BellmanErrorReport, Dataset, InnerSearch, Support, Transition,
};
use crate::tensor::{Graph, Matrix, Optimizer, OptimizerKind};

use super::critic::{Architecture, Critic, CriticConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelFreeConfig {
    /// Weight of the Bellman-error penalty.
    pub lambda: f64,
    /// Bellman-error budget the trained critic is reported against.
    pub epsilon: f64,
    /// Update rule shared by the critic and the actor.
    pub optimizer: OptimizerKind,
    /// Critic step size.
    pub lr: f64,
    /// Actor step size.
    pub policy_lr: f64,
    pub batch: usize,
    pub iterations: usize,
    pub f_steps: usize,
    pub pi_steps: usize,
    /// Joint actions sampled per state for `f(S, π)` and for the actor step.
    pub action_samples: usize,
    /// Enumerate the next-state expectation when the joint action count is at most this.
    pub exact_limit: usize,
    /// Initial states averaged in `f(S̄₀, π)`.
    pub initial_states: usize,
    /// Divide actor advantages by their standard deviation.
    pub normalize_advantages: bool,
    pub budget: NormBudget,
    pub gamma: f64,
    pub seed: u64,
    /// Rewards are multiplied by this before training.
    pub reward_scale: f64,
    pub policy_hidden: usize,
    pub inner: InnerSearch,
    pub critic: CriticConfig,
}

impl Default for ModelFreeConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epsilon: 0.05,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            policy_lr: 1e-3,
            batch: 1024,
            iterations: 200,
            f_steps: 20,
            pi_steps: 5,
            action_samples: 4,
            exact_limit: 25,
            initial_states: 64,
            normalize_advantages: true,
            budget: NormBudget { ff_out: 4.0, ff_in: 4.0, qk: 4.0, value: 4.0, readout: 4.0, p: 2.0, q: 2.0 },
            gamma: 0.95,
            seed: 0,
            reward_scale: 0.05,
            policy_hidden: 64,
            inner: InnerSearch::default(),
            critic: CriticConfig::default(),
        }
    }
}

impl ModelFreeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and nonnegative", self.lambda));
        }
        for (name, v) in [("lr", self.lr), ("policy_lr", self.policy_lr), ("inner.lr", self.inner.lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} must lie in [0, 1)", self.gamma));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad(format!("reward_scale {} must be positive", self.reward_scale));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon {} must be nonnegative", self.epsilon));
        }
        if self.batch == 0 || self.f_steps == 0 || self.initial_states == 0 || self.policy_hidden == 0 {
            return bad("batch, f_steps, initial_states and policy_hidden must be positive".into());
        }
        if self.action_samples < 2 {
            return bad("action_samples must be at least 2 for the baselined actor step".into());
        }
        self.budget.validate()?;
        self.critic.validate()
    }

    fn expectation(&self) -> ActionExpectation {
        ActionExpectation { samples: self.action_samples, exact_limit: self.exact_limit }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// `f(S̄₀, π)` at the start of the iteration, in scaled reward units.
    pub value: f64,
    /// `L(f, f, π)` on the iteration's batch.
    pub bellman_loss: f64,
    /// `L(f, f, π) − L(f̃, f, π)` for the iteration's `f̃`, at least 0.
    pub bellman_error: f64,
    /// `λ` times the Bellman error.
    pub penalty: f64,
    pub within_budget: bool,
    pub wall_ms: u128,
}

pub const LOG_HEADER: [&str; 5] = ["iteration", "value", "bellman_loss", "penalty", "wall_ms"];

pub fn write_log<W: Write>(out: W, log: &[IterationLog]) -> Result<()> {
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER).map_err(fmt)?;
    for r in log {
        w.write_record([
            r.iteration.to_string(),
            r.value.to_string(),
            r.bellman_loss.to_string(),
            r.penalty.to_string(),
            r.wall_ms.to_string(),
        ])
        .map_err(fmt)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<V> {
    pub policy: PolicyNet,
    pub critic: V,
    pub log: Vec<IterationLog>,
    /// Value ceiling in scaled reward units, `reward_scale·R_max/(1 − γ)`.
    pub v_max: f64,
}

/// The data an f-step is evaluated on.
pub struct CriticBatch<'a> {
    pub batch: Vec<&'a Transition>,
    /// Next-state action supports under the current policy.
    pub next: Vec<Support>,
    pub initial: &'a [Matrix],
    /// Action supports at the initial states.
    pub initial_supports: Vec<Support>,
    pub gamma: f64,
    pub n_actions: usize,
}

/// `f(S̄₀, π)` averaged over the initial-state bank.
pub fn initial_value<V: ValueNetwork>(f: &V, cb: &CriticBatch) -> Result<f64> {
    let total: f64 = cb
        .initial
        .iter()
        .zip(&cb.initial_supports)
        .map(|(s, sup)| support_value(f, s, sup, cb.n_actions))
        .sum::<Result<f64>>()?;
    Ok(total / cb.initial.len() as f64)
}

/// Objective and gradient of the critic step; `inner_q[i]` is `f̃(Sᵢ, Aᵢ)`.
pub fn critic_objective_grad<V: ValueNetwork>(
    f: &V,
    cb: &CriticBatch,
    inner_q: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<Matrix>)> {
    let mut g = Graph::new();
    let vars = f.register(&mut g, true);
    let starts = cb
        .initial
        .iter()
        .zip(&cb.initial_supports)
        .map(|(s, sup)| build_support_value(&mut g, f, &vars, s, sup, cb.n_actions))
        .collect::<Result<Vec<_>>>()?;
    let starts = g.add_n(&starts)?;
    let mut objective = g.scale(starts, 1.0 / cb.initial.len() as f64);
    if lambda > 0.0 {
        let mut terms = Vec::with_capacity(cb.batch.len());
        for ((t, sup), &qt) in cb.batch.iter().zip(&cb.next).zip(inner_q) {
            let q = build_q(&mut g, f, &vars, &t.state, &t.actions, cb.n_actions)?;
            let v = build_support_value(&mut g, f, &vars, &t.next_state, sup, cb.n_actions)?;
            let v = g.scale(v, cb.gamma);
            let r = g.constant(Matrix::scalar(t.reward));
            let y = g.add(r, v)?;
            let own = g.sub(q, y)?;
            let own = g.square(own);
            let qt = g.constant(Matrix::scalar(qt));
            let inner = g.sub(qt, y)?;
            let inner = g.square(inner);
            terms.push(g.sub(own, inner)?);
        }
        let penalty = g.add_n(&terms)?;
        let penalty = g.scale(penalty, lambda / cb.batch.len() as f64);
        objective = g.add(objective, penalty)?;
    }
    let grads = g.backward(objective)?;
    Ok((g.scalar(objective), vars.iter().map(|v| grads.wrt(*v)).collect()))
}

/// Runs `steps` projected critic steps. Before each one `f̃` is re-searched
/// from the current `f`, so the penalty always measures the current Bellman
/// error. Returns the Bellman-error report seen before every step.
pub fn critic_steps<V: ValueNetwork>(
    f: &mut V,
    cb: &CriticBatch,
    lambda: f64,
    inner: InnerSearch,
    opt: &mut Optimizer,
    steps: usize,
) -> Result<Vec<BellmanErrorReport>> {
    let mut reports = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (report, best) = bellman_error(f, &cb.batch, &cb.next, cb.gamma, cb.n_actions, inner)?;
        let inner_q =
            cb.batch.iter().map(|t| q_value(&best, &t.state, &t.actions, cb.n_actions)).collect::<Result<Vec<_>>>()?;
        let (obj, grads) = critic_objective_grad(f, cb, &inner_q, lambda)?;
        if !obj.is_finite() {
            return Err(Error::Divergence(format!("critic objective became {obj}")));
        }
        reports.push(report);
        opt.descend(&mut f.blocks_mut(), &grads);
        f.project();
    }
    Ok(reports)
}

/// Score-function ascent of `f(S̄₀, π)` with a per-state mean baseline.
pub fn actor_step<V: ValueNetwork>(
    policy: &mut PolicyNet,
    f: &V,
    initial: &[Matrix],
    samples: usize,
    opt: &mut Optimizer,
    normalize: bool,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let n_actions = policy.n_actions();
    let mut draws = Vec::with_capacity(initial.len() * samples);
    for s in initial {
        let acts: Vec<Vec<usize>> = (0..samples).map(|_| policy.sample(s, rng).0).collect();
        let vals = acts.iter().map(|a| q_value(f, s, a, n_actions)).collect::<Result<Vec<_>>>()?;
        let baseline = vals.iter().sum::<f64>() / samples as f64;
        draws.extend(acts.into_iter().zip(vals).map(|(a, v)| (s, a, v - baseline)));
    }
    let mut scale = 1.0 / draws.len() as f64;
    if normalize {
        let var = draws.iter().map(|d| d.2 * d.2).sum::<f64>() / draws.len() as f64;
        if var <= 1e-24 {
            return Ok(());
        }
        scale /= var.sqrt();
    }
    let mut g = Graph::new();
    let vars = policy.register(&mut g);
    let mut terms = Vec::with_capacity(draws.len());
    for (s, a, adv) in &draws {
        if *adv != 0.0 {
            let lp = policy.build_log_prob(&mut g, &vars, s, a)?;
            terms.push(g.scale(lp, adv * scale));
        }
    }
    if terms.is_empty() {
        return Ok(());
    }
    let obj = g.add_n(&terms)?;
    let grads = g.backward(obj)?;
    let ascent: Vec<Matrix> = vars.iter().map(|v| grads.wrt(*v).scale(-1.0)).collect();
    opt.descend(&mut policy.blocks_mut(), &ascent);
    Ok(())
}

/// `count` seeded reset observations of the dataset's environment.
pub fn initial_bank(agents: usize, landmarks: usize, count: usize, seed: u64) -> Result<Vec<Matrix>> {
    let cfg = EnvConfig { agents, landmarks, ..EnvConfig::default() };
    cfg.validate()?;
    Ok((0..count).map(|i| env::observe(&env::reset(&cfg, &mut episode_rng(seed ^ 0x5eed_ba4c, i)))).collect())
}

/// Trains an actor against a pessimistic critic of the requested family.
pub fn train(dataset: &Dataset, config: &ModelFreeConfig, arch: Architecture) -> Result<TrainOutcome<Critic>> {
    config.validate()?;
    dataset.require_nonempty()?;
    let m = &dataset.meta;
    let bank = initial_bank(m.agents, m.landmarks, config.initial_states, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let v_max = value_ceiling(dataset, config);
    let critic = Critic::new(arch, &config.critic, m.agents, m.state_dim + m.n_actions, v_max, config.budget, &mut rng)?;
    let policy = PolicyNet::new(m.state_dim, config.policy_hidden, m.n_actions, &mut rng);
    train_with(dataset, config, critic, policy, &bank, rng)
}

fn value_ceiling(dataset: &Dataset, config: &ModelFreeConfig) -> f64 {
    (config.reward_scale * dataset.max_abs_reward() / (1.0 - config.gamma)).max(f64::MIN_POSITIVE)
}

/// The training loop for any critic and initial-state bank.
pub fn train_with<V: ValueNetwork>(
    dataset: &Dataset,
    config: &ModelFreeConfig,
    mut critic: V,
    mut policy: PolicyNet,
    initial: &[Matrix],
    mut rng: ChaCha8Rng,
) -> Result<TrainOutcome<V>> {
    config.validate()?;
    dataset.require_nonempty()?;
    if initial.is_empty() {
        return Err(Error::Contract("initial-state bank is empty".into()));
    }
    let data = dataset.with_reward_scale(config.reward_scale);
    let v_max = value_ceiling(dataset, config);
    let n_actions = data.meta.n_actions;
    let mode = config.expectation();
    let mut critic_opt = Optimizer::new(config.optimizer, config.lr, &critic.shapes());
    let policy_shapes: Vec<_> = policy.blocks().iter().map(|b| b.shape()).collect();
    let mut policy_opt = Optimizer::new(config.optimizer, config.policy_lr, &policy_shapes);
    let started = Instant::now();
    let mut log = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let batch = data.sample_batch(config.batch, &mut rng);
        let next = next_supports(&policy, &batch, mode, &mut rng);
        let initial_supports = initial.iter().map(|s| support(&policy, s, mode, &mut rng)).collect();
        let cb = CriticBatch { batch, next, initial, initial_supports, gamma: config.gamma, n_actions };
        let value = initial_value(&critic, &cb)?;
        let reports = critic_steps(&mut critic, &cb, config.lambda, config.inner, &mut critic_opt, config.f_steps)?;
        let within_budget = critic.within_budget();
        if !within_budget {
            return Err(Error::Contract(format!("critic left its norm budget at iteration {iteration}")));
        }
        let after = initial_value(&critic, &cb)?;
        if !after.is_finite() || after.abs() > 10.0 * v_max {
            return Err(Error::Divergence(format!(
                "value estimate {after} exceeds 10*V_max = {} at iteration {iteration}",
                10.0 * v_max
            )));
        }

        for _ in 0..config.pi_steps {
            actor_step(
                &mut policy,
                &critic,
                initial,
                config.action_samples,
                &mut policy_opt,
                config.normalize_advantages,
                &mut rng,
            )?;
        }
        let first = &reports[0];
        log.push(IterationLog {
            iteration,
            value,
            bellman_loss: first.self_loss,
            bellman_error: first.error,
            penalty: config.lambda * first.error,
            within_budget,
            wall_ms: started.elapsed().as_millis(),
        });
    }
    Ok(TrainOutcome { policy, critic, log, v_max })
}

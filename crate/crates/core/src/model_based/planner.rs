//! Ensembles of fitted models and policy search against the least favorable one.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{prescribed_radius, BoundInputs};
use crate::env;
use crate::error::{Error, Result};
use crate::networks::{JointPolicy, PolicyNet};
use crate::offline::Dataset;
use crate::tensor::{Adam, Graph, Matrix};

use super::dynamics::{fit_mle, init_rng, in_confidence_region, DynamicsConfig, DynamicsModel, FitConfig, RegionTest};
use super::synthetic::synthetic_reward;

/// How a predicted next state is turned into the next observation and its reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutTask {
    /// Predicted kinematics are grounded in the cooperative-navigation world.
    Navigation,
    /// The prediction is the next state and the reward is [`synthetic_reward`].
    Synthetic,
}

impl RolloutTask {
    pub fn advance(self, state: &Matrix, pred: Matrix) -> Result<(Matrix, f64)> {
        match self {
            Self::Navigation => {
                let next = env::ground_prediction(&env::state_from_observation(state)?, &pred)?;
                Ok((env::observe(&next), env::reward(&next)))
            }
            Self::Synthetic => {
                let r = synthetic_reward(&pred);
                Ok((pred, r))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBasedConfig {
    pub ensemble: usize,
    pub dynamics: DynamicsConfig,
    pub fit: FitConfig,
    /// Noise scale shared by every member; the MLE residual scale when absent.
    pub sigma: Option<f64>,
    /// Confidence radius; `c1·e′/n` from the bound calculator when absent.
    pub zeta: Option<f64>,
    pub c1: f64,
    pub delta: f64,
    pub horizon: usize,
    pub rollouts: usize,
    pub iterations: usize,
    pub policy_lr: f64,
    pub policy_hidden: usize,
    pub gamma: f64,
    pub initial_states: usize,
    pub normalize_advantages: bool,
    pub seed: u64,
}

impl Default for ModelBasedConfig {
    fn default() -> Self {
        Self {
            ensemble: 5,
            dynamics: DynamicsConfig::default(),
            fit: FitConfig::default(),
            sigma: None,
            zeta: None,
            c1: 1.0,
            delta: 0.1,
            horizon: 10,
            rollouts: 256,
            iterations: 100,
            policy_lr: 1e-2,
            policy_hidden: 64,
            gamma: 0.95,
            initial_states: 64,
            normalize_advantages: true,
            seed: 0,
        }
    }
}

impl ModelBasedConfig {
    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        self.fit.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.ensemble == 0 || self.horizon == 0 || self.rollouts == 0 || self.initial_states == 0 || self.policy_hidden == 0
        {
            return bad("ensemble, horizon, rollouts, initial_states and policy_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} must lie in [0, 1)", self.gamma));
        }
        if !(self.policy_lr > 0.0) {
            return bad(format!("policy_lr {} must be positive", self.policy_lr));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("sigma {s} must be positive"));
            }
        }
        if let Some(z) = self.zeta {
            if !(z >= 0.0) {
                return bad(format!("zeta {z} must be nonnegative"));
            }
        }
        if !(self.c1 > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("c1 must be positive and delta in (0, 1)".into());
        }
        Ok(())
    }
}

/// Independently initialized fits of the same data; `mle_index` has the lowest loss.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub models: Vec<DynamicsModel>,
    pub mle_index: usize,
    pub losses: Vec<f64>,
}

impl Ensemble {
    pub fn single(model: DynamicsModel) -> Self {
        Self { models: vec![model], mle_index: 0, losses: vec![0.0] }
    }

    pub fn mle(&self) -> &DynamicsModel {
        &self.models[self.mle_index]
    }

    pub fn sigma(&self) -> f64 {
        self.mle().sigma
    }
}

/// Seed of ensemble member `k`.
pub fn member_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k as u64 + 1)
}

/// Fits `config.ensemble` members and assigns them a common noise scale.
pub fn fit_ensemble(dataset: &Dataset, config: &ModelBasedConfig) -> Result<Ensemble> {
    config.validate()?;
    dataset.require_nonempty()?;
    let m = &dataset.meta;
    let fits = (0..config.ensemble)
        .into_par_iter()
        .map(|k| {
            let seed = member_seed(config.seed, k);
            let init = DynamicsModel::random(
                &config.dynamics,
                m.state_dim,
                m.n_actions,
                1.0,
                &mut init_rng(seed),
            )?;
            fit_mle(dataset, init, &config.fit, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<f64> = fits.iter().map(|f| f.final_loss).collect();
    let mle_index = (0..losses.len()).min_by(|&a, &b| losses[a].total_cmp(&losses[b])).expect("nonempty");
    let sigma = match config.sigma {
        Some(s) => s,
        None => fits[mle_index].model.residual_sigma(&dataset.transitions)?.max(1e-9),
    };
    let models = fits.into_iter().map(|f| f.model.with_sigma(sigma)).collect::<Result<_>>()?;
    Ok(Ensemble { models, mle_index, losses })
}

/// `c1·e′/n` for the dynamics class the config describes.
pub fn prescribed_zeta(dataset: &Dataset, config: &ModelBasedConfig) -> Result<f64> {
    let m = &dataset.meta;
    let inp = BoundInputs {
        n: dataset.len(),
        m: config.dynamics.m,
        layers: config.dynamics.layers,
        d: m.state_dim + m.n_actions,
        agents: m.agents,
        budget: config.dynamics.budget,
        c1: config.c1,
        delta: config.delta,
        ..BoundInputs::default()
    };
    prescribed_radius(&inp)
}

/// One simulated trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Matrix>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
    }
}

/// How to simulate a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutSpec {
    pub task: RolloutTask,
    pub horizon: usize,
    pub rollouts: usize,
    pub gamma: f64,
    /// Add the model's Gaussian noise to every step.
    pub noisy: bool,
}

/// `spec.rollouts` trajectories; rollout `j` starts at `initial[j mod len]`
/// and draws from its own stream of `seed`.
pub fn rollouts<P: JointPolicy>(
    model: &DynamicsModel,
    policy: &P,
    initial: &[Matrix],
    spec: &RolloutSpec,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if initial.is_empty() {
        return Err(Error::Contract("rollouts need at least one initial state".into()));
    }
    (0..spec.rollouts)
        .into_par_iter()
        .map(|j| {
            let mut rng = crate::offline::episode_rng(seed, j);
            let mut state = initial[j % initial.len()].clone();
            let mut tr = Trajectory {
                states: Vec::with_capacity(spec.horizon),
                actions: Vec::with_capacity(spec.horizon),
                rewards: Vec::with_capacity(spec.horizon),
            };
            for _ in 0..spec.horizon {
                let (acts, _) = policy.sample(&state, &mut rng);
                let pred = model.sample_next(&state, &acts, spec.noisy, &mut rng)?;
                let (next, r) = spec.task.advance(&state, pred)?;
                tr.states.push(std::mem::replace(&mut state, next));
                tr.actions.push(acts);
                tr.rewards.push(r);
            }
            Ok(tr)
        })
        .collect()
}

/// Monte-Carlo discounted value of `policy` under `model` from the bank.
pub fn model_value<P: JointPolicy>(
    model: &DynamicsModel,
    policy: &P,
    initial: &[Matrix],
    spec: &RolloutSpec,
    seed: u64,
) -> Result<f64> {
    let trs = rollouts(model, policy, initial, spec, seed)?;
    Ok(mean_return(&trs, spec.gamma))
}

fn mean_return(trs: &[Trajectory], gamma: f64) -> f64 {
    trs.iter().map(|t| t.discounted_return(gamma)).sum::<f64>() / trs.len() as f64
}

/// Score-function ascent step on the discounted return of `trs`, with a
/// per-step mean baseline.
pub fn reinforce_step(
    policy: &mut PolicyNet,
    trs: &[Trajectory],
    gamma: f64,
    normalize: bool,
    opt: &mut Adam,
) -> Result<()> {
    let horizon = trs.first().map_or(0, |t| t.rewards.len());
    let to_go: Vec<Vec<f64>> = trs
        .iter()
        .map(|t| {
            let mut g = vec![0.0; horizon];
            let mut acc = 0.0;
            for k in (0..horizon).rev() {
                acc = t.rewards[k] + gamma * acc;
                g[k] = acc;
            }
            g
        })
        .collect();
    let baseline: Vec<f64> =
        (0..horizon).map(|k| to_go.iter().map(|g| g[k]).sum::<f64>() / trs.len() as f64).collect();
    let mut adv: Vec<(usize, usize, f64)> = Vec::with_capacity(trs.len() * horizon);
    for (j, g) in to_go.iter().enumerate() {
        for k in 0..horizon {
            adv.push((j, k, gamma.powi(k as i32) * (g[k] - baseline[k])));
        }
    }
    let mut scale = 1.0 / trs.len() as f64;
    if normalize {
        let var = adv.iter().map(|a| a.2 * a.2).sum::<f64>() / adv.len().max(1) as f64;
        if var <= 1e-24 {
            return Ok(());
        }
        scale /= var.sqrt();
    }
    let mut g = Graph::new();
    let vars = policy.register(&mut g);
    let mut terms = Vec::with_capacity(adv.len());
    for &(j, k, a) in &adv {
        if a != 0.0 {
            let lp = policy.build_log_prob(&mut g, &vars, &trs[j].states[k], &trs[j].actions[k])?;
            terms.push(g.scale(lp, a * scale));
        }
    }
    if terms.is_empty() {
        return Ok(());
    }
    let obj = g.add_n(&terms)?;
    let grads = g.backward(obj)?;
    let ascent: Vec<Matrix> = vars.iter().map(|v| grads.wrt(*v).scale(-1.0)).collect();
    opt.step(&mut policy.blocks_mut(), &ascent);
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerLog {
    pub iteration: usize,
    /// Values of the retained members, in ensemble order.
    pub member_values: Vec<f64>,
    pub pessimistic_value: f64,
    /// Ensemble index of the minimizing member.
    pub pessimistic_member: usize,
    pub wall_ms: u128,
}

pub const PLANNER_LOG_HEADER: [&str; 5] =
    ["iteration", "pessimistic_value", "pessimistic_member", "member_values", "wall_ms"];

/// Member values are joined with `;`.
pub fn write_planner_log<W: Write>(out: W, log: &[PlannerLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(PLANNER_LOG_HEADER).map_err(io)?;
    for r in log {
        let values: Vec<String> = r.member_values.iter().map(|v| v.to_string()).collect();
        w.write_record([
            r.iteration.to_string(),
            r.pessimistic_value.to_string(),
            r.pessimistic_member.to_string(),
            values.join(";"),
            r.wall_ms.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PlannerOutcome {
    pub policy: PolicyNet,
    pub log: Vec<PlannerLog>,
    pub zeta: f64,
    /// Region test of every member against the MLE member.
    pub regions: Vec<RegionTest>,
    /// Members that passed and were planned against.
    pub kept: Vec<usize>,
}

/// Policy search maximizing the minimum over retained members of the model value.
pub fn pessimistic_policy(
    ensemble: &Ensemble,
    dataset: &Dataset,
    task: RolloutTask,
    initial: &[Matrix],
    config: &ModelBasedConfig,
) -> Result<PlannerOutcome> {
    config.validate()?;
    let zeta = match config.zeta {
        Some(z) => z,
        None => prescribed_zeta(dataset, config)?,
    };
    let regions = ensemble
        .models
        .iter()
        .map(|f| in_confidence_region(f, ensemble.mle(), dataset, zeta))
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<usize> = (0..regions.len()).filter(|&k| regions[k].inside).collect();
    if kept.is_empty() {
        return Err(Error::Config(format!("no ensemble member lies within the confidence radius zeta = {zeta}")));
    }
    let mle = ensemble.mle();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = PolicyNet::new(mle.state_dim, config.policy_hidden, mle.n_actions, &mut rng);
    let shapes: Vec<_> = policy.blocks().iter().map(|b| b.shape()).collect();
    let mut opt = Adam::new(config.policy_lr, &shapes);
    let spec = RolloutSpec {
        task,
        horizon: config.horizon,
        rollouts: config.rollouts,
        gamma: config.gamma,
        noisy: true,
    };
    let mut log = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let start = Instant::now();
        // Common random numbers across members.
        let seed = member_seed(config.seed ^ 0x7011_0075, iteration);
        let mut sims = Vec::with_capacity(kept.len());
        for &k in &kept {
            sims.push(rollouts(&ensemble.models[k], &policy, initial, &spec, seed)?);
        }
        let member_values: Vec<f64> = sims.iter().map(|t| mean_return(t, config.gamma)).collect();
        let worst = (0..kept.len()).min_by(|&a, &b| member_values[a].total_cmp(&member_values[b])).expect("nonempty");
        reinforce_step(&mut policy, &sims[worst], config.gamma, config.normalize_advantages, &mut opt)?;
        log.push(PlannerLog {
            iteration,
            pessimistic_value: member_values[worst],
            pessimistic_member: kept[worst],
            member_values,
            wall_ms: start.elapsed().as_millis(),
        });
    }
    Ok(PlannerOutcome { policy, log, zeta, regions, kept })
}


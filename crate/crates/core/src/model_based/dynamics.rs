//! Gaussian transition models with a set-transformer mean.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::bounds::NormBudget;
use crate::error::{Error, Result};
use crate::networks::{joint_input, SetTransformerParams};
use crate::offline::{Dataset, Transition};
use crate::tensor::{Adam, Graph, Matrix};

/// Generator for initial parameters, kept apart from every data stream of the same seed.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x1417_0001);
    rng
}

/// Transitions per gradient shard.
const SHARD: usize = 256;

/// `S′ = base + mean(S, A) + σ·ε` with `ε` standard normal per entry.
///
/// The mean is a set-transformer dynamics head applied to
/// `input_scale · [S, one-hot A]` and divided back by `input_scale`; `base`
/// is `S` when `residual` is set and zero otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    pub params: SetTransformerParams,
    pub sigma: f64,
    pub budget: NormBudget,
    pub state_dim: usize,
    pub n_actions: usize,
    pub input_scale: f64,
    pub residual: bool,
}

/// Architecture and parametrization of a dynamics model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub layers: usize,
    pub m: usize,
    pub budget: NormBudget,
    pub input_scale: f64,
    pub residual: bool,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { layers: 1, m: 4, budget: NormBudget::default(), input_scale: 1.0, residual: false }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.m == 0 {
            return Err(Error::Config("dynamics layers and m must be positive".into()));
        }
        if self.budget.p != 2.0 || self.budget.q != 2.0 {
            return Err(Error::Config(format!(
                "dynamics budgets are Frobenius norms, got p = {}, q = {}",
                self.budget.p, self.budget.q
            )));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::Config(format!("input_scale {} must be positive", self.input_scale)));
        }
        self.budget.validate()
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("noise scale {sigma} must be positive")))
    }
}

impl DynamicsModel {
    /// Random parameters projected into the budget.
    pub fn random<R: Rng>(cfg: &DynamicsConfig, state_dim: usize, n_actions: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        check_sigma(sigma)?;
        let d = state_dim + n_actions;
        if state_dim == 0 || n_actions == 0 {
            return Err(Error::Config("state and action widths must be positive".into()));
        }
        let mut params = SetTransformerParams::random(cfg.layers, cfg.m, d, 2.0, false, 1.0, rng);
        params.project(&cfg.budget);
        Ok(Self {
            params,
            sigma,
            budget: cfg.budget,
            state_dim,
            n_actions,
            input_scale: cfg.input_scale,
            residual: cfg.residual,
        })
    }

    pub fn config(&self) -> DynamicsConfig {
        DynamicsConfig {
            layers: self.params.num_layers(),
            m: self.params.m,
            budget: self.budget,
            input_scale: self.input_scale,
            residual: self.residual,
        }
    }

    pub fn agents_input(&self, state: &Matrix, actions: &[usize]) -> Result<Matrix> {
        Ok(joint_input(state, actions, self.n_actions)?.scale(self.input_scale))
    }

    /// Conditional mean of the next state.
    pub fn predict(&self, state: &Matrix, actions: &[usize]) -> Result<Matrix> {
        let out = self.params.dynamics_forward(&self.agents_input(state, actions)?, self.state_dim)?;
        let mut out = out.scale(1.0 / self.input_scale);
        if self.residual {
            out.add_assign(state);
        }
        Ok(out)
    }

    /// One draw from the transition law; `σ = 0` noise is skipped entirely.
    pub fn sample_next<R: Rng + ?Sized>(&self, state: &Matrix, actions: &[usize], noise: bool, rng: &mut R) -> Result<Matrix> {
        let mut mean = self.predict(state, actions)?;
        if noise {
            for v in mean.data_mut() {
                *v += self.sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        Ok(mean)
    }

    /// Mean of `‖S′ − mean(S, A)‖²_F` over `transitions`.
    pub fn loss(&self, transitions: &[Transition]) -> Result<f64> {
        if transitions.is_empty() {
            return Err(Error::Contract("loss over an empty set of transitions".into()));
        }
        let total = transitions
            .par_iter()
            .map(|t| Ok(self.predict(&t.state, &t.actions)?.sub(&t.next_state)?.frobenius_norm().powi(2)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(total.iter().sum::<f64>() / transitions.len() as f64)
    }

    /// Loss and its gradient over every parameter block.
    pub fn loss_grad(&self, transitions: &[&Transition]) -> Result<(f64, Vec<Matrix>)> {
        if transitions.is_empty() {
            return Err(Error::Contract("gradient over an empty set of transitions".into()));
        }
        let shards = transitions
            .par_chunks(SHARD)
            .map(|chunk| self.shard_loss_grad(chunk))
            .collect::<Result<Vec<_>>>()?;
        let n = transitions.len() as f64;
        let mut it = shards.into_iter();
        let (mut loss, mut grads) = it.next().expect("nonempty");
        for (l, g) in it {
            loss += l;
            for (a, b) in grads.iter_mut().zip(&g) {
                a.add_assign(b);
            }
        }
        for g in &mut grads {
            g.scale_in_place(1.0 / n);
        }
        Ok((loss / n, grads))
    }

    /// Summed loss and gradient of one shard.
    fn shard_loss_grad(&self, chunk: &[&Transition]) -> Result<(f64, Vec<Matrix>)> {
        let mut g = Graph::new();
        let (layers, _) = self.params.register(&mut g, true);
        let mut terms = Vec::with_capacity(chunk.len());
        for t in chunk {
            let x = g.constant(self.agents_input(&t.state, &t.actions)?);
            let out = self.params.build_dynamics(&mut g, &layers, x, self.state_dim)?;
            let out = g.scale(out, 1.0 / self.input_scale);
            let target = if self.residual { t.next_state.sub(&t.state)? } else { t.next_state.clone() };
            let target = g.constant(target);
            let diff = g.sub(out, target)?;
            let sq = g.square(diff);
            terms.push(g.sum(sq));
        }
        let total = g.add_n(&terms)?;
        let loss = g.scalar(total);
        let grads = g.backward(total)?;
        let mut out = Vec::with_capacity(4 * layers.len());
        for lv in &layers {
            out.extend([grads.wrt(lv.w_qk), grads.wrt(lv.w_v), grads.wrt(lv.ff_out), grads.wrt(lv.ff_in)]);
        }
        Ok((loss, out))
    }

    /// Maximum-likelihood noise scale: root mean squared residual per entry.
    pub fn residual_sigma(&self, transitions: &[Transition]) -> Result<f64> {
        let per_entry = (self.state_dim * transitions.first().map_or(1, |t| t.state.rows())) as f64;
        Ok((self.loss(transitions)? / per_entry).sqrt())
    }

    /// Same parameters with a different noise scale.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { sigma, ..self.clone() })
    }

    pub fn within_budget(&self) -> bool {
        self.params.within(&self.budget)
    }
}

/// How `fit_mle` descends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Full-batch gradient descent; a step is accepted only if it lowers the loss.
    Backtracking,
    /// Mini-batch Adam, followed by the full-batch polish when `polish_steps > 0`.
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub method: FitMethod,
    /// Epochs for Adam, steps for backtracking.
    pub steps: usize,
    pub lr: f64,
    /// Mini-batch size for Adam; 0 uses the whole dataset.
    pub batch: usize,
    /// Full-batch backtracking steps run after Adam.
    pub polish_steps: usize,
    /// Record the full-batch loss every `log_every` steps.
    pub log_every: usize,
    /// Cosine-anneal the Adam rate from `lr` to `lr/100` over the epochs.
    pub anneal: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { method: FitMethod::Adam, steps: 200, lr: 3e-3, batch: 64, polish_steps: 0, log_every: 10, anneal: true }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("fit lr {} must be positive", self.lr)));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }
}

/// A fitted model with its loss trace.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: DynamicsModel,
    pub final_loss: f64,
    /// `(step, full-batch loss)` pairs.
    pub log: Vec<(usize, f64)>,
}

fn guard(loss: f64, step: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Divergence(format!("dynamics loss became {loss} at step {step}")))
    }
}

fn descend_projected(model: &DynamicsModel, grads: &[Matrix], lr: f64) -> DynamicsModel {
    let mut next = model.clone();
    for (p, g) in next.params.blocks_mut().into_iter().zip(grads) {
        p.axpy(-lr, g);
    }
    next.params.project(&next.budget);
    next
}

/// Full-batch projected descent with step halving; the loss never increases.
fn backtracking(
    mut model: DynamicsModel,
    data: &[&Transition],
    steps: usize,
    lr0: f64,
    log_every: usize,
    offset: usize,
    log: &mut Vec<(usize, f64)>,
) -> Result<(DynamicsModel, f64)> {
    let owned: Vec<Transition> = data.iter().map(|t| (*t).clone()).collect();
    let (mut loss, mut grads) = model.loss_grad(data)?;
    guard(loss, offset)?;
    let mut lr = lr0;
    for step in 0..steps {
        let mut accepted = false;
        for _ in 0..40 {
            let cand = descend_projected(&model, &grads, lr);
            let cl = cand.loss(&owned)?;
            if cl.is_finite() && cl <= loss {
                model = cand;
                accepted = true;
                lr *= 2.0;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break;
        }
        let (l, g) = model.loss_grad(data)?;
        loss = guard(l, offset + step + 1)?;
        grads = g;
        if (step + 1) % log_every == 0 {
            log.push((offset + step + 1, loss));
        }
    }
    Ok((model, loss))
}

/// Least-squares fit of the mean from a random start, projected into the budget after every step.
pub fn fit_mle(dataset: &Dataset, init: DynamicsModel, cfg: &FitConfig, seed: u64) -> Result<FitOutcome> {
    cfg.validate()?;
    dataset.require_nonempty()?;
    let all: Vec<&Transition> = dataset.transitions.iter().collect();
    let mut log = vec![(0, guard(init.loss(&dataset.transitions)?, 0)?)];
    let (model, final_loss) = match cfg.method {
        FitMethod::Backtracking => backtracking(init, &all, cfg.steps, cfg.lr, cfg.log_every, 0, &mut log)?,
        FitMethod::Adam => {
            let mut model = init;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shapes: Vec<_> = model.params.blocks().iter().map(|b| b.shape()).collect();
            let mut opt = Adam::new(cfg.lr, &shapes);
            let batch = if cfg.batch == 0 { all.len() } else { cfg.batch.min(all.len()) };
            let mut order = all.clone();
            for epoch in 0..cfg.steps {
                if cfg.anneal {
                    let frac = epoch as f64 / cfg.steps.max(1) as f64;
                    let floor = 0.01 * cfg.lr;
                    opt.set_lr(floor + 0.5 * (cfg.lr - floor) * (1.0 + (std::f64::consts::PI * frac).cos()));
                }
                order.shuffle(&mut rng);
                for chunk in order.chunks(batch) {
                    let (l, grads) = model.loss_grad(chunk)?;
                    guard(l, epoch)?;
                    opt.step(&mut model.params.blocks_mut(), &grads);
                    model.params.project(&model.budget);
                }
                if (epoch + 1) % cfg.log_every == 0 {
                    log.push((epoch + 1, guard(model.loss(&dataset.transitions)?, epoch + 1)?));
                }
            }
            if cfg.polish_steps > 0 {
                backtracking(model, &all, cfg.polish_steps, cfg.lr, cfg.log_every, cfg.steps, &mut log)?
            } else {
                let l = guard(model.loss(&dataset.transitions)?, cfg.steps)?;
                (model, l)
            }
        }
    };
    Ok(FitOutcome { model, final_loss, log })
}

/// Total variation between `N(f₁(S, A), σ²I)` and `N(f₂(S, A), σ²I)`:
/// `2Φ(‖Δ‖_F / 2σ) − 1`.
pub fn tv_point(f1: &DynamicsModel, f2: &DynamicsModel, state: &Matrix, actions: &[usize]) -> Result<f64> {
    check_sigma(f1.sigma)?;
    check_sigma(f2.sigma)?;
    if (f1.sigma - f2.sigma).abs() > 1e-12 * f1.sigma.max(f2.sigma) {
        return Err(Error::Contract(format!("noise scales differ: {} vs {}", f1.sigma, f2.sigma)));
    }
    let delta = f1.predict(state, actions)?.sub(&f2.predict(state, actions)?)?.frobenius_norm();
    Ok(tv_from_distance(delta, f1.sigma))
}

/// `2Φ(δ/2σ) − 1 = erf(δ / (2√2·σ))`.
pub fn tv_from_distance(delta: f64, sigma: f64) -> f64 {
    erf(delta / (2.0 * std::f64::consts::SQRT_2 * sigma))
}

/// Mean squared total variation between `f` and the reference over the dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionTest {
    pub mean_sq_tv: f64,
    pub inside: bool,
}

pub fn in_confidence_region(f: &DynamicsModel, mle: &DynamicsModel, dataset: &Dataset, zeta: f64) -> Result<RegionTest> {
    if !(zeta >= 0.0) {
        return Err(Error::Domain(format!("confidence radius {zeta} must be nonnegative")));
    }
    dataset.require_nonempty()?;
    let tv = dataset
        .transitions
        .par_iter()
        .map(|t| tv_point(f, mle, &t.state, &t.actions).map(|v| v * v))
        .collect::<Result<Vec<f64>>>()?;
    let mean_sq_tv = tv.iter().sum::<f64>() / tv.len() as f64;
    Ok(RegionTest { mean_sq_tv, inside: mean_sq_tv <= zeta })
}

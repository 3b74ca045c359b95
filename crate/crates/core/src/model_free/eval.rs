//! Policy evaluation in the true environment.

use rayon::prelude::*;
use serde::Serialize;

use crate::env::{self, EnvConfig};
use crate::error::{Error, Result};
use crate::networks::JointPolicy;
use crate::offline::episode_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Mean undiscounted episode return.
    pub mean: f64,
    /// Sample standard deviation of the episode returns, 0 for one episode.
    pub std: f64,
    pub episodes: usize,
}

impl EvalSummary {
    pub fn from_returns(returns: &[f64]) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = if returns.len() > 1 {
            (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std, episodes: returns.len() }
    }
}

/// Per-episode returns; episode `i` uses stream `i` of `seed`, so results do
/// not depend on the thread count.
pub fn episode_returns<P: JointPolicy + ?Sized>(
    policy: &P,
    cfg: &EnvConfig,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::Contract("evaluation needs at least one episode".into()));
    }
    let cfg = EnvConfig { horizon, ..*cfg };
    cfg.validate()?;
    (0..episodes)
        .into_par_iter()
        .map(|i| env::episode_return(&cfg, policy, &mut episode_rng(seed, i)))
        .collect()
}

pub fn evaluate<P: JointPolicy + ?Sized>(
    policy: &P,
    cfg: &EnvConfig,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<EvalSummary> {
    Ok(EvalSummary::from_returns(&episode_returns(policy, cfg, episodes, horizon, seed)?))
}

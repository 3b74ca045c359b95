//! A transition law drawn from the model class itself, for consistency checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::offline::{episode_rng, Dataset, DatasetMeta, Subsample, Transition};
use crate::tensor::Matrix;

use super::dynamics::{DynamicsConfig, DynamicsModel};

/// `N` agents whose next state is `truth(S, A) + σ·ε`, with states drawn
/// uniformly from `[−1, 1]^{N×d_S}` and uniform actions.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub truth: DynamicsModel,
    pub agents: usize,
}

/// `−‖S‖²_F / N`: agents are rewarded for staying near the origin.
pub fn synthetic_reward(state: &Matrix) -> f64 {
    -state.frobenius_norm().powi(2) / state.rows() as f64
}

impl SyntheticTask {
    pub fn random(
        cfg: &DynamicsConfig,
        agents: usize,
        state_dim: usize,
        n_actions: usize,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if agents == 0 {
            return Err(Error::Config("a synthetic task needs at least one agent".into()));
        }
        let truth = DynamicsModel::random(cfg, state_dim, n_actions, sigma, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { truth, agents })
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        Matrix::from_fn(self.agents, self.truth.state_dim, |_, _| rng.gen_range(-1.0..=1.0))
    }

    pub fn sample_actions<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        (0..self.agents).map(|_| rng.gen_range(0..self.truth.n_actions)).collect()
    }

    /// `n` independent transitions; `noisy = false` records the mean exactly.
    pub fn dataset(&self, n: usize, noisy: bool, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Config("at least one transition is required".into()));
        }
        let transitions = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = episode_rng(seed, i);
                let state = self.sample_state(&mut rng);
                let actions = self.sample_actions(&mut rng);
                let next_state = self.truth.sample_next(&state, &actions, noisy, &mut rng)?;
                let reward = synthetic_reward(&next_state);
                Ok(Transition { state, actions, reward, next_state })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            meta: DatasetMeta {
                agents: self.agents,
                landmarks: 0,
                state_dim: self.truth.state_dim,
                n_actions: self.truth.n_actions,
                gamma: 0.95,
                seed,
                behavior: "synthetic-uniform".into(),
                episodes: n,
                horizon: 1,
                subsample: Subsample::All,
            },
            transitions,
        })
    }

    /// `count` states from the sampling distribution.
    pub fn initial_states(&self, count: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a17_5747);
        (0..count).map(|_| self.sample_state(&mut rng)).collect()
    }
}

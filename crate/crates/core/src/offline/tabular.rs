//! Datasets drawn from finite MDPs, with one-hot states for a single agent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::TabularMdp;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::{Dataset, DatasetMeta, Subsample, Transition};

fn draw<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

pub fn one_hot(index: usize, width: usize) -> Matrix {
    Matrix::from_fn(1, width, |_, c| if c == index { 1.0 } else { 0.0 })
}

/// `n` i.i.d. transitions with `(s, a) ~ nu` and `s′ ~ P(·|s, a)`.
pub fn tabular_dataset(mdp: &TabularMdp, nu: &[Vec<f64>], n: usize, seed: u64) -> Result<Dataset> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if nu.len() != ns || nu.iter().any(|r| r.len() != na) {
        return Err(Error::Contract("data distribution shape does not match the MDP".into()));
    }
    let flat: Vec<f64> = nu.iter().flatten().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions = (0..n)
        .map(|_| {
            let pair = draw(&flat, &mut rng);
            let (s, a) = (pair / na, pair % na);
            let t = draw(&mdp.transition[s][a], &mut rng);
            Transition { state: one_hot(s, ns), actions: vec![a], reward: mdp.reward[s][a], next_state: one_hot(t, ns) }
        })
        .collect();
    Ok(Dataset {
        meta: DatasetMeta {
            agents: 1,
            landmarks: 0,
            state_dim: ns,
            n_actions: na,
            gamma: mdp.gamma,
            seed,
            behavior: "tabular".into(),
            episodes: n,
            horizon: 1,
            subsample: Subsample::All,
        },
        transitions,
    })
}

//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use homarl::bounds::NormBudget;
use homarl::env::EnvConfig;
use homarl::networks::SetTransformerValue;
use homarl::offline::{collect, Behavior, Dataset, Subsample};
use homarl::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A set of `rows` elements with entries uniform in `[-1, 1]`.
pub fn random_set(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
}

pub fn value_net(layers: usize, m: usize, d: usize, seed: u64) -> SetTransformerValue {
    SetTransformerValue::random(layers, m, d, 10.0, NormBudget::default(), &mut rng(seed))
}

/// A small cooperative-navigation dataset collected under the greedy behavior policy.
pub fn navigation_data(agents: usize, episodes: usize) -> Dataset {
    collect(&EnvConfig::with_agents(agents), Behavior::Greedy { epsilon: 0.5 }, episodes, 0.95, 7, Subsample::All)
        .expect("valid collection settings")
}

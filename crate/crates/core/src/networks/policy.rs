//! Factorized joint policies `π(Ā|S̄) = Πᵢ μ(aᵢ|sᵢ)`.
//!
//! Every agent uses the same per-agent map, so permuting agents permutes
//! the factors and leaves the joint probability unchanged.

use rand::{Rng, RngCore};

use crate::error::{dim, Result};
use crate::tensor::{Graph, Matrix, Var};

pub trait JointPolicy: Sync {
    fn n_actions(&self) -> usize;

    /// Per-agent action probabilities, N×n_actions.
    fn probs(&self, states: &Matrix) -> Matrix;

    /// Draws one action per agent; returns the joint action and its log-probability.
    fn sample(&self, states: &Matrix, rng: &mut dyn RngCore) -> (Vec<usize>, f64) {
        let probs = self.probs(states);
        let mut logp = 0.0;
        let actions = (0..probs.rows())
            .map(|i| {
                let a = categorical(probs.row(i), rng);
                logp += probs.get(i, a).ln();
                a
            })
            .collect();
        (actions, logp)
    }

    fn log_prob(&self, states: &Matrix, actions: &[usize]) -> f64 {
        let probs = self.probs(states);
        actions.iter().enumerate().map(|(i, &a)| probs.get(i, a).ln()).sum()
    }
}

/// Index drawn from a probability vector by inverse CDF.
pub(crate) fn categorical(p: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Rounding left the cumulative sum just under one; take the last
    // action with positive mass.
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

#[derive(Clone, Copy, Debug)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl JointPolicy for UniformPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn probs(&self, states: &Matrix) -> Matrix {
        Matrix::filled(states.rows(), self.n_actions, 1.0 / self.n_actions as f64)
    }
}

/// Per-agent one-hidden-layer ReLU network with a softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl PolicyNet {
    /// Hidden weights uniform on `±1/√fan_in`; the output layer starts at
    /// zero so the initial policy is uniform.
    pub fn new<R: Rng>(state_dim: usize, hidden: usize, n_actions: usize, rng: &mut R) -> Self {
        let s = 1.0 / (state_dim as f64).sqrt();
        Self {
            w1: Matrix::from_fn(state_dim, hidden, |_, _| rng.gen_range(-s..=s)),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, n_actions),
            b2: Matrix::zeros(1, n_actions),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn blocks(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.blocks().into_iter().map(|m| g.param(m.clone())).collect()
    }

    pub fn logits(&self, states: &Matrix) -> Result<Matrix> {
        self.check(states)?;
        states
            .matmul(&self.w1)?
            .add_row_broadcast(&self.b1)?
            .relu()
            .matmul(&self.w2)?
            .add_row_broadcast(&self.b2)
    }

    fn check(&self, states: &Matrix) -> Result<()> {
        if states.cols() != self.state_dim() {
            return Err(dim("policy", format!("state width {} but policy expects {}", states.cols(), self.state_dim())));
        }
        Ok(())
    }

    /// `Σᵢ log μ(aᵢ|sᵢ)` on the tape.
    pub fn build_log_prob(&self, g: &mut Graph, vars: &[Var], states: &Matrix, actions: &[usize]) -> Result<Var> {
        self.check(states)?;
        let s = g.constant(states.clone());
        let pre = g.matmul(s, vars[0])?;
        let pre = g.add_row(pre, vars[1])?;
        let h = g.relu(pre);
        let logits = g.matmul(h, vars[2])?;
        let logits = g.add_row(logits, vars[3])?;
        let logp = g.row_log_softmax(logits);
        let mask = Matrix::from_fn(states.rows(), self.w2.cols(), |r, c| if actions[r] == c { 1.0 } else { 0.0 });
        let mask = g.constant(mask);
        let picked = g.mul(logp, mask)?;
        Ok(g.sum(picked))
    }
}

impl JointPolicy for PolicyNet {
    fn n_actions(&self) -> usize {
        self.w2.cols()
    }

    fn probs(&self, states: &Matrix) -> Matrix {
        self.logits(states).expect("state width checked by caller").row_softmax()
    }
}

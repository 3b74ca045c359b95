//! Finite MDPs with exact discounted occupancies.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// A finite MDP with `transition[s][a][s']` and `reward[s][a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub gamma: f64,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("{what} is not a probability distribution")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(transition: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>, initial: Vec<f64>, gamma: f64) -> Result<Self> {
        let s = initial.len();
        if s == 0 || transition.len() != s || reward.len() != s {
            return Err(Error::Contract("transition, reward and initial tables disagree on the state count".into()));
        }
        let a = transition[0].len();
        for (i, row) in transition.iter().enumerate() {
            if row.len() != a || reward[i].len() != a || a == 0 {
                return Err(Error::Contract(format!("state {i} has a ragged action table")));
            }
            for next in row {
                if next.len() != s {
                    return Err(Error::Contract(format!("state {i} has a next-state row of the wrong length")));
                }
                check_distribution(next, "a transition row")?;
            }
        }
        check_distribution(&initial, "the initial distribution")?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Domain(format!("discount {gamma} must lie in [0, 1)")));
        }
        Ok(Self { transition, reward, initial, gamma })
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transition[0].len()
    }

    fn check_policy(&self, policy: &[Vec<f64>]) -> Result<()> {
        if policy.len() != self.n_states() || policy.iter().any(|r| r.len() != self.n_actions()) {
            return Err(Error::Contract("policy table shape does not match the MDP".into()));
        }
        policy.iter().try_for_each(|r| check_distribution(r, "a policy row"))
    }

    /// Normalized discounted occupancy `d^π(s, a) = (1−γ) Σ_t γ^t Pr(s_t = s, a_t = a)`.
    ///
    /// Solves `(I − γ P_πᵀ) d_S = (1−γ) ρ₀` and spreads each state mass over `π(·|s)`.
    pub fn occupancy(&self, policy: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_policy(policy)?;
        let n = self.n_states();
        let p_pi = DMatrix::from_fn(n, n, |s, t| {
            (0..self.n_actions()).map(|a| policy[s][a] * self.transition[s][a][t]).sum::<f64>()
        });
        let lhs = DMatrix::identity(n, n) - p_pi.transpose() * self.gamma;
        let rhs = DVector::from_iterator(n, self.initial.iter().map(|x| x * (1.0 - self.gamma)));
        let state = lhs.lu().solve(&rhs).ok_or_else(|| Error::Domain("occupancy system is singular".into()))?;
        Ok((0..n).map(|s| policy[s].iter().map(|pa| state[s].max(0.0) * pa).collect()).collect())
    }

    /// Exact `Q^π` from `(I − γ P^π) Q = r` on state-action pairs, indexed `[s][a]`.
    pub fn q_values(&self, policy: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_policy(policy)?;
        let (ns, na) = (self.n_states(), self.n_actions());
        let n = ns * na;
        let p = DMatrix::from_fn(n, n, |i, j| {
            let (s, a) = (i / na, i % na);
            let (t, b) = (j / na, j % na);
            self.transition[s][a][t] * policy[t][b]
        });
        let lhs = DMatrix::identity(n, n) - p * self.gamma;
        let rhs = DVector::from_iterator(n, self.reward.iter().flatten().copied());
        let q = lhs.lu().solve(&rhs).ok_or_else(|| Error::Domain("Bellman system is singular".into()))?;
        Ok((0..ns).map(|s| (0..na).map(|a| q[s * na + a]).collect()).collect())
    }

    /// Empirical occupancy from geometric-horizon rollouts totalling `steps` transitions.
    pub fn monte_carlo_occupancy<R: Rng>(&self, policy: &[Vec<f64>], steps: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        self.check_policy(policy)?;
        let draw = |p: &[f64], rng: &mut R| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, x) in p.iter().enumerate() {
                acc += x;
                if u < acc {
                    return i;
                }
            }
            p.len() - 1
        };
        let mut counts = vec![vec![0.0; self.n_actions()]; self.n_states()];
        let mut s = draw(&self.initial, rng);
        for _ in 0..steps {
            let a = draw(&policy[s], rng);
            counts[s][a] += 1.0;
            s = if rng.gen::<f64>() < self.gamma { draw(&self.transition[s][a], rng) } else { draw(&self.initial, rng) };
        }
        for row in &mut counts {
            for c in row.iter_mut() {
                *c /= steps as f64;
            }
        }
        Ok(counts)
    }
}

/// `max_{(s,a)} d^{π*}(s,a) / ν(s,a)` over pairs with positive target mass.
pub fn density_ratio(target: &[Vec<f64>], data: &[Vec<f64>]) -> Result<f64> {
    if target.len() != data.len() || target.iter().zip(data).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Contract("occupancy tables differ in shape".into()));
    }
    let mut worst: f64 = 0.0;
    for (s, (tr, dr)) in target.iter().zip(data).enumerate() {
        for (a, (t, d)) in tr.iter().zip(dr).enumerate() {
            if *t > 0.0 {
                if *d <= 0.0 {
                    return Err(Error::InfiniteCoverage { state: s, action: a });
                }
                worst = worst.max(t / d);
            }
        }
    }
    Ok(worst)
}

/// Coverage coefficient of data distribution `nu` against the occupancy of `policy`.
pub fn concentrability_tabular(mdp: &TabularMdp, policy: &[Vec<f64>], nu: &[Vec<f64>]) -> Result<f64> {
    density_ratio(&mdp.occupancy(policy)?, nu)
}

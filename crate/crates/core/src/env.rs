//! Cooperative navigation: `N` point agents try to cover `L` landmarks.
//!
//! Agents are double integrators in the arena `[−1, 1]²` with five discrete
//! actions. The shared reward is `−Σ_j min_i ‖y_j − x_i‖₂`, so the dynamics
//! and reward are both invariant to relabeling the agents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};
use crate::networks::JointPolicy;
use crate::tensor::Matrix;

pub const N_ACTIONS: usize = 5;
pub const ARENA: f64 = 1.0;

/// Unit directions for `noop, up, down, left, right`.
pub const DIRECTIONS: [[f64; 2]; N_ACTIONS] = [[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub agents: usize,
    pub landmarks: usize,
    pub force: f64,
    pub dt: f64,
    pub damping: f64,
    pub horizon: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { agents: 3, landmarks: 3, force: 1.0, dt: 0.1, damping: 0.5, horizon: 25 }
    }
}

impl EnvConfig {
    pub fn with_agents(agents: usize) -> Self {
        Self { agents, landmarks: agents, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 || self.landmarks == 0 || self.horizon == 0 {
            return Err(Error::Config("agents, landmarks and horizon must be positive".into()));
        }
        if !(self.dt > 0.0) || !(self.force >= 0.0) || !(0.0..=1.0).contains(&self.damping) {
            return Err(Error::Config("dt must be positive, force nonnegative and damping in [0, 1]".into()));
        }
        Ok(())
    }

    /// Per-agent observation width `4 + 2L`.
    pub fn state_dim(&self) -> usize {
        4 + 2 * self.landmarks
    }

    /// Per-agent joint-input width `d_S + 5`.
    pub fn input_dim(&self) -> usize {
        self.state_dim() + N_ACTIONS
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub agent_pos: Vec<[f64; 2]>,
    pub agent_vel: Vec<[f64; 2]>,
    pub landmark_pos: Vec<[f64; 2]>,
    pub t: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn uniform_point<R: Rng>(rng: &mut R) -> [f64; 2] {
    [rng.gen_range(-ARENA..=ARENA), rng.gen_range(-ARENA..=ARENA)]
}

impl WorldState {
    pub fn n_agents(&self) -> usize {
        self.agent_pos.len()
    }

    /// Agent `i` of the result is agent `perm[i]` of `self`.
    pub fn permute_agents(&self, perm: &[usize]) -> Self {
        Self {
            agent_pos: perm.iter().map(|&i| self.agent_pos[i]).collect(),
            agent_vel: perm.iter().map(|&i| self.agent_vel[i]).collect(),
            landmark_pos: self.landmark_pos.clone(),
            t: self.t,
        }
    }
}

/// Uniform positions in the arena and zero velocities.
pub fn reset<R: Rng>(cfg: &EnvConfig, rng: &mut R) -> WorldState {
    let agent_pos = (0..cfg.agents).map(|_| uniform_point(rng)).collect();
    let landmark_pos = (0..cfg.landmarks).map(|_| uniform_point(rng)).collect();
    WorldState { agent_pos, agent_vel: vec![[0.0; 2]; cfg.agents], landmark_pos, t: 0 }
}

pub fn reset_seeded(cfg: &EnvConfig, seed: u64) -> WorldState {
    reset(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `−Σ_j min_i ‖y_j − x_i‖₂`.
pub fn reward(state: &WorldState) -> f64 {
    reward_of(&state.agent_pos, &state.landmark_pos)
}

fn reward_of(agents: &[[f64; 2]], landmarks: &[[f64; 2]]) -> f64 {
    -landmarks
        .iter()
        .map(|&y| agents.iter().map(|&x| dist(x, y)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
}

/// Advances one step and returns the new state with its reward.
pub fn step(cfg: &EnvConfig, state: &WorldState, actions: &[usize]) -> Result<(WorldState, f64)> {
    if actions.len() != state.n_agents() {
        return Err(Error::Contract(format!("{} actions for {} agents", actions.len(), state.n_agents())));
    }
    if let Some(a) = actions.iter().find(|&&a| a >= N_ACTIONS) {
        return Err(Error::Contract(format!("action {a} outside 0..{N_ACTIONS}")));
    }
    let mut next = state.clone();
    for (i, &a) in actions.iter().enumerate() {
        let dir = DIRECTIONS[a];
        for k in 0..2 {
            let v = cfg.damping * state.agent_vel[i][k] + cfg.force * cfg.dt * dir[k];
            next.agent_vel[i][k] = v;
            next.agent_pos[i][k] = (state.agent_pos[i][k] + v * cfg.dt).clamp(-ARENA, ARENA);
        }
    }
    next.t += 1;
    let r = reward(&next);
    Ok((next, r))
}

/// Landmark offsets from `x`, nearest first; ties broken by the offset itself.
fn sorted_offsets(x: [f64; 2], landmarks: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut offs: Vec<[f64; 2]> = landmarks.iter().map(|y| [y[0] - x[0], y[1] - x[1]]).collect();
    offs.sort_by(|a, b| {
        a[0].hypot(a[1])
            .total_cmp(&b[0].hypot(b[1]))
            .then(a[0].total_cmp(&b[0]))
            .then(a[1].total_cmp(&b[1]))
    });
    offs
}

/// N×(4+2L) channel matrix: `[pos, vel, landmark offsets sorted by distance]` per agent.
pub fn observe(state: &WorldState) -> Matrix {
    let width = 4 + 2 * state.landmark_pos.len();
    let mut data = Vec::with_capacity(state.n_agents() * width);
    for (x, v) in state.agent_pos.iter().zip(&state.agent_vel) {
        data.extend_from_slice(x);
        data.extend_from_slice(v);
        for o in sorted_offsets(*x, &state.landmark_pos) {
            data.extend_from_slice(&o);
        }
    }
    Matrix::new(state.n_agents(), width, data).expect("finite state")
}

/// Rebuilds the world from an observation, taking landmarks from the first row.
pub fn state_from_observation(obs: &Matrix) -> Result<WorldState> {
    if obs.cols() < 6 || (obs.cols() - 4) % 2 != 0 {
        return Err(dim("state_from_observation", format!("width {} is not 4 + 2L", obs.cols())));
    }
    let n_landmarks = (obs.cols() - 4) / 2;
    let r0 = obs.row(0);
    let landmark_pos = (0..n_landmarks).map(|j| [r0[0] + r0[4 + 2 * j], r0[1] + r0[5 + 2 * j]]).collect();
    let agent_pos = (0..obs.rows()).map(|i| [obs.get(i, 0), obs.get(i, 1)]).collect();
    let agent_vel = (0..obs.rows()).map(|i| [obs.get(i, 2), obs.get(i, 3)]).collect();
    Ok(WorldState { agent_pos, agent_vel, landmark_pos, t: 0 })
}

/// Reward of the state an observation encodes.
pub fn reward_from_observation(obs: &Matrix) -> Result<f64> {
    Ok(reward(&state_from_observation(obs)?))
}

/// Replaces the agent kinematics of `state` with the first four columns of
/// `pred`, clamping positions to the arena. Landmarks are kept.
pub fn ground_prediction(state: &WorldState, pred: &Matrix) -> Result<WorldState> {
    if pred.rows() != state.n_agents() || pred.cols() < 4 {
        return Err(dim("ground_prediction", format!("prediction {:?} for {} agents", pred.shape(), state.n_agents())));
    }
    let mut next = state.clone();
    for i in 0..pred.rows() {
        next.agent_pos[i] = [pred.get(i, 0).clamp(-ARENA, ARENA), pred.get(i, 1).clamp(-ARENA, ARENA)];
        next.agent_vel[i] = [pred.get(i, 2), pred.get(i, 3)];
    }
    next.t += 1;
    Ok(next)
}

/// Rolls `policy` for `cfg.horizon` steps; returns the undiscounted return.
pub fn episode_return<P: JointPolicy + ?Sized, R: Rng>(cfg: &EnvConfig, policy: &P, rng: &mut R) -> Result<f64> {
    let mut state = reset(cfg, rng);
    let mut total = 0.0;
    for _ in 0..cfg.horizon {
        let (actions, _) = policy.sample(&observe(&state), rng);
        let (next, r) = step(cfg, &state, &actions)?;
        total += r;
        state = next;
    }
    Ok(total)
}

/// Moves each agent toward the nearest landmark it is closest to among all
/// agents (falling back to its nearest landmark), acting uniformly at random
/// with probability `epsilon`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreedyCoverPolicy {
    pub epsilon: f64,
}

impl GreedyCoverPolicy {
    /// The action best aligned with a damped pursuit of `target`.
    fn preferred_action(pos: [f64; 2], vel: [f64; 2], target: [f64; 2]) -> usize {
        let want = [(target[0] - pos[0]) - 0.3 * vel[0], (target[1] - pos[1]) - 0.3 * vel[1]];
        if want[0].hypot(want[1]) < 0.02 {
            return 0;
        }
        (1..N_ACTIONS)
            .max_by(|&a, &b| {
                let da = DIRECTIONS[a][0] * want[0] + DIRECTIONS[a][1] * want[1];
                let db = DIRECTIONS[b][0] * want[0] + DIRECTIONS[b][1] * want[1];
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("nonempty")
    }
}

impl JointPolicy for GreedyCoverPolicy {
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn probs(&self, states: &Matrix) -> Matrix {
        let world = state_from_observation(states).expect("cooperative navigation observation");
        let n = world.n_agents();
        let mut out = Matrix::filled(n, N_ACTIONS, self.epsilon / N_ACTIONS as f64);
        for i in 0..n {
            let x = world.agent_pos[i];
            let mut best: Option<(f64, [f64; 2])> = None;
            let mut nearest: Option<(f64, [f64; 2])> = None;
            for &y in &world.landmark_pos {
                let di = dist(x, y);
                if nearest.map_or(true, |(d, _)| di < d) {
                    nearest = Some((di, y));
                }
                let owned = world.agent_pos.iter().enumerate().all(|(k, &z)| k == i || dist(z, y) > di);
                if owned && best.map_or(true, |(d, _)| di < d) {
                    best = Some((di, y));
                }
            }
            let target = best.or(nearest).expect("at least one landmark").1;
            let a = Self::preferred_action(x, world.agent_vel[i], target);
            let v = out.get(i, a) + 1.0 - self.epsilon;
            out.set(i, a, v);
        }
        out
    }
}

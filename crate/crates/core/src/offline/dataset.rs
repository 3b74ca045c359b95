//! Offline transition datasets: collection, binary storage and CSV export.
//!
//! Binary layout (little endian): magic `HMDS`, u32 version, u32 agents,
//! u32 landmarks, u32 state width, u32 action count, f64 discount, u64 seed,
//! u32 behavior-name length and its UTF-8 bytes, u32 episodes, u32 horizon,
//! u8 subsample mode, u64 transition count, then per transition the packed
//! f64 block `state (N·d_S), actions (N), reward, next state (N·d_S)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{self, EnvConfig, GreedyCoverPolicy, N_ACTIONS};
use crate::error::{Error, Result};
use crate::networks::{JointPolicy, UniformPolicy};
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"HMDS";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// N×d_S agent rows.
    pub state: Matrix,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub next_state: Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subsample {
    All,
    /// Keep steps `t ≥ horizon/2` only.
    StationaryTail,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub agents: usize,
    pub landmarks: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub seed: u64,
    pub behavior: String,
    pub episodes: usize,
    pub horizon: usize,
    pub subsample: Subsample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub transitions: Vec<Transition>,
}

/// Data-collection policies for cooperative navigation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Behavior {
    Uniform,
    Greedy { epsilon: f64 },
}

impl Behavior {
    pub fn id(&self) -> String {
        match self {
            Self::Uniform => "uniform".into(),
            Self::Greedy { epsilon } => format!("greedy-eps{epsilon}"),
        }
    }
}

impl JointPolicy for Behavior {
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn probs(&self, states: &Matrix) -> Matrix {
        match self {
            Self::Uniform => UniformPolicy { n_actions: N_ACTIONS }.probs(states),
            Self::Greedy { epsilon } => GreedyCoverPolicy { epsilon: *epsilon }.probs(states),
        }
    }
}

/// Independent stream for episode `index` under `seed`.
pub fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Rolls `episodes` behavior episodes; deterministic in `seed` regardless of thread count.
pub fn collect(
    cfg: &EnvConfig,
    behavior: Behavior,
    episodes: usize,
    gamma: f64,
    seed: u64,
    subsample: Subsample,
) -> Result<Dataset> {
    cfg.validate()?;
    if episodes == 0 {
        return Err(Error::Config("at least one episode is required".into()));
    }
    let per_episode: Vec<Vec<Transition>> = (0..episodes)
        .into_par_iter()
        .map(|ep| {
            let mut rng = episode_rng(seed, ep);
            let mut state = env::reset(cfg, &mut rng);
            let mut out = Vec::with_capacity(cfg.horizon);
            for t in 0..cfg.horizon {
                let obs = env::observe(&state);
                let (actions, _) = behavior.sample(&obs, &mut rng);
                let (next, reward) = env::step(cfg, &state, &actions)?;
                if subsample == Subsample::All || 2 * t >= cfg.horizon {
                    out.push(Transition { state: obs, actions, reward, next_state: env::observe(&next) });
                }
                state = next;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            agents: cfg.agents,
            landmarks: cfg.landmarks,
            state_dim: cfg.state_dim(),
            n_actions: N_ACTIONS,
            gamma,
            seed,
            behavior: behavior.id(),
            episodes,
            horizon: cfg.horizon,
            subsample,
        },
        transitions: per_episode.into_iter().flatten().collect(),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Contract("dataset has no transitions".into()));
        }
        Ok(())
    }

    /// `size` transitions drawn uniformly with replacement.
    pub fn sample_batch<R: Rng>(&self, size: usize, rng: &mut R) -> Vec<&Transition> {
        (0..size).map(|_| self.transitions.choose(rng).expect("nonempty dataset")).collect()
    }

    /// Copy with every reward multiplied by `scale`.
    pub fn with_reward_scale(&self, scale: f64) -> Dataset {
        let mut out = self.clone();
        for t in &mut out.transitions {
            t.reward *= scale;
        }
        out
    }

    /// Largest absolute reward, the `R_max` implied by the data.
    pub fn max_abs_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward.abs()).fold(0.0, f64::max)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.meta;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, m.agents as u32, m.landmarks as u32, m.state_dim as u32, m.n_actions as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&m.gamma.to_le_bytes());
        out.extend_from_slice(&m.seed.to_le_bytes());
        out.extend_from_slice(&(m.behavior.len() as u32).to_le_bytes());
        out.extend_from_slice(m.behavior.as_bytes());
        out.extend_from_slice(&(m.episodes as u32).to_le_bytes());
        out.extend_from_slice(&(m.horizon as u32).to_le_bytes());
        out.push(match m.subsample {
            Subsample::All => 0,
            Subsample::StationaryTail => 1,
        });
        out.extend_from_slice(&(self.transitions.len() as u64).to_le_bytes());
        for t in &self.transitions {
            let floats = t
                .state
                .data()
                .iter()
                .copied()
                .chain(t.actions.iter().map(|&a| a as f64))
                .chain(std::iter::once(t.reward))
                .chain(t.next_state.data().iter().copied());
            for x in floats {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let agents = r.u32()? as usize;
        let landmarks = r.u32()? as usize;
        let state_dim = r.u32()? as usize;
        let n_actions = r.u32()? as usize;
        let gamma = r.f64()?;
        let seed = r.u64()?;
        let name_len = r.u32()? as usize;
        let behavior = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("behavior name is not UTF-8".into()))?;
        let episodes = r.u32()? as usize;
        let horizon = r.u32()? as usize;
        let subsample = match r.take(1)?[0] {
            0 => Subsample::All,
            1 => Subsample::StationaryTail,
            other => return Err(Error::Format(format!("unknown subsample mode {other}"))),
        };
        let count = r.u64()? as usize;
        if agents == 0 || state_dim == 0 {
            return Err(Error::Format("dataset header has empty shapes".into()));
        }
        let mut transitions = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            let state = Matrix::new(agents, state_dim, r.floats(agents * state_dim)?)?;
            let actions = r
                .floats(agents)?
                .into_iter()
                .map(|a| {
                    if a >= 0.0 && a.fract() == 0.0 && (a as usize) < n_actions {
                        Ok(a as usize)
                    } else {
                        Err(Error::Format(format!("invalid action {a}")))
                    }
                })
                .collect::<Result<_>>()?;
            let reward = r.f64()?;
            let next_state = Matrix::new(agents, state_dim, r.floats(agents * state_dim)?)?;
            transitions.push(Transition { state, actions, reward, next_state });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            meta: DatasetMeta { agents, landmarks, state_dim, n_actions, gamma, seed, behavior, episodes, horizon, subsample },
            transitions,
        })
    }

    /// Hex SHA-256 of the binary encoding.
    pub fn checksum(&self) -> String {
        Sha256::digest(self.to_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let d = self.meta.state_dim;
        let mut h = vec!["transition".to_string(), "agent".to_string()];
        h.extend((0..d).map(|k| format!("s{k}")));
        h.extend(["action".to_string(), "reward".to_string()]);
        h.extend((0..d).map(|k| format!("next_s{k}")));
        h
    }

    /// One CSV row per (transition, agent).
    pub fn export_csv<W: Write>(&self, out: W) -> Result<()> {
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header()).map_err(fmt)?;
        for (i, t) in self.transitions.iter().enumerate() {
            for agent in 0..self.meta.agents {
                let mut rec = vec![i.to_string(), agent.to_string()];
                rec.extend(t.state.row(agent).iter().map(|x| x.to_string()));
                rec.push(t.actions[agent].to_string());
                rec.push(t.reward.to_string());
                rec.extend(t.next_state.row(agent).iter().map(|x| x.to_string()));
                w.write_record(rec).map_err(fmt)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated dataset".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

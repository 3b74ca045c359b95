//! The run configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use homarl::approx_gap::GapConfig;
use homarl::bounds::BoundInputs;
use homarl::env::EnvConfig;
use homarl::model_based::{DynamicsConfig, FitConfig, ModelBasedConfig};
use homarl::model_free::{Architecture, ModelFreeConfig};
use homarl::offline::{Behavior, Subsample};

use crate::error::CliError;

/// Every setting a run reads. Only `seed` is required; it replaces the
/// `seed` field of every section so that one number reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub train_mf: ModelFreeConfig,
    #[serde(default)]
    pub train_mb: ModelBasedConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub approx_gap: GapConfig,
    #[serde(default)]
    pub mle_probe: ProbeSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub behavior: Behavior,
    pub episodes: usize,
    pub gamma: f64,
    pub subsample: Subsample,
    /// Dataset read by `train-mf` and `train-mb`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Also write a per-agent CSV export next to the binary dataset.
    pub export_csv: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            behavior: Behavior::Greedy { epsilon: 0.5 },
            episodes: 2000,
            gamma: 0.95,
            subsample: Subsample::All,
            path: None,
            export_csv: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// Critic family trained by `train-mf`.
    pub architecture: Architecture,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { architecture: Architecture::SetTransformer }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    pub horizon: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 200, horizon: 25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    /// Randomized trials per proposition in `verify-bounds`.
    pub trials: usize,
    pub inputs: BoundInputs,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self { trials: 10_000, inputs: BoundInputs::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub agents: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    /// Noise scale of the synthetic ground truth.
    pub sigma: f64,
    pub task_seed: u64,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eval_points: usize,
    pub dynamics: DynamicsConfig,
    pub fit: FitConfig,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            agents: 2,
            state_dim: 2,
            n_actions: 2,
            sigma: 0.1,
            task_seed: 1,
            sizes: vec![500, 1000, 2000, 4000],
            seeds: vec![0, 1, 2],
            eval_points: 2000,
            dynamics: DynamicsConfig::default(),
            fit: FitConfig { steps: 300, lr: 3e-3, batch: 64, ..FitConfig::default() },
        }
    }
}

impl RunConfig {
    #[cfg(test)]
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            env: EnvConfig::default(),
            dataset: DatasetSection::default(),
            network: NetworkSection::default(),
            train_mf: ModelFreeConfig::default(),
            train_mb: ModelBasedConfig::default(),
            eval: EvalSection::default(),
            bounds: BoundsSection::default(),
            approx_gap: GapConfig::default(),
            mle_probe: ProbeSection::default(),
        };
        cfg.propagate_seed();
        cfg
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::resolve(Some(text), None)
    }

    /// Reads `text` (empty when absent), lets `seed` override the file's seed,
    /// then checks the result against the schema.
    pub fn resolve(text: Option<&str>, seed: Option<u64>) -> Result<Self, CliError> {
        let schema = |m: &str| CliError::Schema(format!("invalid config: {}", m.trim()));
        let mut table: toml::Table = toml::from_str(text.unwrap_or("")).map_err(|e| schema(e.message()))?;
        if let Some(seed) = seed {
            let seed = i64::try_from(seed).map_err(|_| schema("seed must fit in a signed 64-bit integer"))?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        let mut cfg: Self = table.try_into().map_err(|e: toml::de::Error| schema(e.message()))?;
        cfg.propagate_seed();
        Ok(cfg)
    }

    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::MissingInput(format!("cannot read config {}: {e}", path.display())))?;
        Self::resolve(Some(&text), seed)
    }

    pub fn propagate_seed(&mut self) {
        self.train_mf.seed = self.seed;
        self.train_mb.seed = self.seed;
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Runtime(format!("cannot serialize the config: {e}")))
    }
}

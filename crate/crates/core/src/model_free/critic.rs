//! Critic families compared by the model-free learner.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::NormBudget;
use crate::error::{Error, Result};
use crate::networks::{Checkpoint, DeepSets, Mlp, SetTransformerValue, ValueNetwork};
use crate::tensor::{Graph, Matrix, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SetTransformer,
    DeepSets,
    Mlp,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Self::SetTransformer, Self::DeepSets, Self::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            Self::SetTransformer => "set_transformer",
            Self::DeepSets => "deep_sets",
            Self::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}; expected set_transformer, deep_sets or mlp")))
    }
}

/// Sizes shared by the three critic families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    /// Set-transformer layers.
    pub layers: usize,
    /// Set-transformer rFF width per coordinate.
    pub m: usize,
    /// Hidden width of the deep-sets and MLP critics.
    pub hidden: usize,
    /// Every critic sees `input_scale · [state, one-hot action]`.
    pub input_scale: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { layers: 2, m: 4, hidden: 32, input_scale: 0.2 }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.m == 0 || self.hidden == 0 {
            return Err(Error::Config("critic layers, m and hidden must be positive".into()));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::Config(format!("input_scale {} must be positive", self.input_scale)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum CriticNet {
    SetTransformer(SetTransformerValue),
    DeepSets(DeepSets),
    Mlp(Mlp),
}

/// A critic network behind a fixed input rescaling.
#[derive(Clone, Debug)]
pub struct Critic {
    pub net: CriticNet,
    pub input_scale: f64,
}

impl Critic {
    /// `agents × input_dim` inputs; the set transformer clips at `v_max` and lives in `budget`.
    pub fn new<R: Rng>(
        arch: Architecture,
        cfg: &CriticConfig,
        agents: usize,
        input_dim: usize,
        v_max: f64,
        budget: NormBudget,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        budget.validate()?;
        let h = cfg.hidden;
        let net = match arch {
            Architecture::SetTransformer => {
                CriticNet::SetTransformer(SetTransformerValue::random(cfg.layers, cfg.m, input_dim, v_max, budget, rng))
            }
            Architecture::DeepSets => CriticNet::DeepSets(DeepSets::random(input_dim, h, h, h, rng)),
            Architecture::Mlp => CriticNet::Mlp(Mlp::random(agents, input_dim, h, rng)),
        };
        Ok(Self { net, input_scale: cfg.input_scale })
    }

    pub fn architecture(&self) -> Architecture {
        match self.net {
            CriticNet::SetTransformer(_) => Architecture::SetTransformer,
            CriticNet::DeepSets(_) => Architecture::DeepSets,
            CriticNet::Mlp(_) => Architecture::Mlp,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        match &self.net {
            CriticNet::SetTransformer(n) => Checkpoint::SetTransformer(n.params.clone()),
            CriticNet::DeepSets(n) => Checkpoint::DeepSets(n.clone()),
            CriticNet::Mlp(n) => Checkpoint::Mlp(n.clone()),
        }
    }

    pub fn budget(&self) -> Option<&NormBudget> {
        match &self.net {
            CriticNet::SetTransformer(n) => Some(&n.budget),
            _ => None,
        }
    }
}

impl ValueNetwork for Critic {
    fn blocks(&self) -> Vec<&Matrix> {
        match &self.net {
            CriticNet::SetTransformer(n) => n.blocks(),
            CriticNet::DeepSets(n) => n.blocks(),
            CriticNet::Mlp(n) => n.blocks(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        match &mut self.net {
            CriticNet::SetTransformer(n) => n.blocks_mut(),
            CriticNet::DeepSets(n) => n.blocks_mut(),
            CriticNet::Mlp(n) => n.blocks_mut(),
        }
    }

    fn build(&self, graph: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let x = graph.scale(x, self.input_scale);
        match &self.net {
            CriticNet::SetTransformer(n) => n.build(graph, vars, x),
            CriticNet::DeepSets(n) => n.build(graph, vars, x),
            CriticNet::Mlp(n) => n.build(graph, vars, x),
        }
    }

    fn project(&mut self) {
        if let CriticNet::SetTransformer(n) = &mut self.net {
            n.project();
        }
    }

    fn within_budget(&self) -> bool {
        match &self.net {
            CriticNet::SetTransformer(n) => n.within_budget(),
            _ => true,
        }
    }

    fn input_dim(&self) -> usize {
        match &self.net {
            CriticNet::SetTransformer(n) => n.input_dim(),
            CriticNet::DeepSets(n) => n.input_dim(),
            CriticNet::Mlp(n) => n.input_dim(),
        }
    }
}

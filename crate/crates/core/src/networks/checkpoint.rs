//! Little-endian binary checkpoints with a TOML sidecar manifest.
//!
//! Layout: magic `HMCK`, then u32 fields `version, L, m, d, flags`. Bits
//! 8..16 of `flags` hold the model kind and bit 0 marks a readout vector.
//! Set-transformer payloads are the parameter blocks in declaration order
//! followed by `v_max` and `p`; shapes follow from `(L, m, d)`. Other kinds
//! set bit 1 and insert a block count plus `(rows, cols)` pairs before the
//! floats.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::NormBudget;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::{DeepSets, Mlp, PolicyNet, SetTransformerParams, ValueNetwork};

const MAGIC: &[u8; 4] = b"HMCK";
const VERSION: u32 = 1;
const HAS_READOUT: u32 = 1;
const SHAPE_TABLE: u32 = 1 << 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SetTransformer,
    DeepSets,
    Mlp,
    Policy,
}

impl ModelKind {
    fn code(self) -> u32 {
        match self {
            Self::SetTransformer => 0,
            Self::DeepSets => 1,
            Self::Mlp => 2,
            Self::Policy => 3,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        Ok(match c {
            0 => Self::SetTransformer,
            1 => Self::DeepSets,
            2 => Self::Mlp,
            3 => Self::Policy,
            _ => return Err(Error::Format(format!("unknown model kind {c}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoint {
    SetTransformer(SetTransformerParams),
    DeepSets(DeepSets),
    Mlp(Mlp),
    Policy(PolicyNet),
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: ModelKind,
    layers: u32,
    m: u32,
    d: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<String>,
    blocks: Vec<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget: Option<NormBudget>,
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::SetTransformer(_) => ModelKind::SetTransformer,
            Self::DeepSets(_) => ModelKind::DeepSets,
            Self::Mlp(_) => ModelKind::Mlp,
            Self::Policy(_) => ModelKind::Policy,
        }
    }

    fn blocks(&self) -> Vec<&Matrix> {
        match self {
            Self::SetTransformer(p) => p.blocks(),
            Self::DeepSets(n) => n.blocks(),
            Self::Mlp(n) => n.blocks(),
            Self::Policy(n) => n.blocks(),
        }
    }

    fn dims(&self) -> (u32, u32, u32) {
        match self {
            Self::SetTransformer(p) => (p.num_layers() as u32, p.m as u32, p.d as u32),
            Self::DeepSets(n) => (0, 0, n.input_dim() as u32),
            Self::Mlp(n) => (n.channels as u32, n.hidden() as u32, n.d as u32),
            Self::Policy(n) => (0, n.hidden() as u32, n.state_dim() as u32),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (l, m, d) = self.dims();
        let mut flags = self.kind().code() << 8;
        if let Self::SetTransformer(p) = self {
            if p.readout.is_some() {
                flags |= HAS_READOUT;
            }
        } else {
            flags |= SHAPE_TABLE;
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, l, m, d, flags] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let blocks = self.blocks();
        if flags & SHAPE_TABLE != 0 {
            out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
            for b in &blocks {
                out.extend_from_slice(&(b.rows() as u32).to_le_bytes());
                out.extend_from_slice(&(b.cols() as u32).to_le_bytes());
            }
        }
        for b in &blocks {
            for x in b.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        if let Self::SetTransformer(p) = self {
            out.extend_from_slice(&p.v_max.to_le_bytes());
            out.extend_from_slice(&p.p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let (l, m, d, flags) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()?);
        let kind = ModelKind::from_code((flags >> 8) & 0xff)?;
        let shapes: Vec<(usize, usize)> = if flags & SHAPE_TABLE != 0 {
            let n = r.u32()? as usize;
            (0..n).map(|_| Ok((r.u32()? as usize, r.u32()? as usize))).collect::<Result<_>>()?
        } else {
            let mut s = Vec::new();
            for _ in 0..l {
                s.extend([(d, d), (d, d), (1, d * m), (d, d * m)]);
            }
            if flags & HAS_READOUT != 0 {
                s.push((d, 1));
            }
            s
        };
        let mut blocks = Vec::with_capacity(shapes.len());
        for (rows, cols) in shapes {
            let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            blocks.push(Matrix::new(rows, cols, data)?);
        }
        let ckpt = match kind {
            ModelKind::SetTransformer => {
                let v_max = r.f64()?;
                let p = r.f64()?;
                let mut params = SetTransformerParams::zeros(l, m, d, p, flags & HAS_READOUT != 0, v_max);
                for (dst, src) in params.blocks_mut().into_iter().zip(blocks) {
                    *dst = src;
                }
                Self::SetTransformer(params)
            }
            ModelKind::DeepSets => {
                let mut b = blocks.into_iter();
                let mut next = || b.next().ok_or_else(|| Error::Format("missing deep sets block".into()));
                Self::DeepSets(DeepSets {
                    enc_in: next()?,
                    enc_bias: next()?,
                    enc_out: next()?,
                    enc_offset: next()?,
                    agg_in: next()?,
                    agg_bias: next()?,
                    agg_out: next()?,
                    agg_offset: next()?,
                })
            }
            ModelKind::Mlp => {
                let mut b = blocks.into_iter();
                let mut next = || b.next().ok_or_else(|| Error::Format("missing mlp block".into()));
                Self::Mlp(Mlp {
                    channels: l,
                    d,
                    w1: next()?,
                    b1: next()?,
                    w2: next()?,
                    b2: next()?,
                    w3: next()?,
                    b3: next()?,
                })
            }
            ModelKind::Policy => {
                let mut b = blocks.into_iter();
                let mut next = || b.next().ok_or_else(|| Error::Format("missing policy block".into()));
                Self::Policy(PolicyNet { w1: next()?, b1: next()?, w2: next()?, b2: next()? })
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(ckpt)
    }

    fn manifest(&self, budget: Option<&NormBudget>) -> Manifest {
        let (layers, m, d) = self.dims();
        let (v_max, p) = match self {
            Self::SetTransformer(params) => (Some(params.v_max), Some(params.p.to_string())),
            _ => (None, None),
        };
        Manifest {
            kind: self.kind(),
            layers,
            m,
            d,
            v_max,
            p,
            blocks: self.blocks().iter().map(|b| [b.rows(), b.cols()]).collect(),
            budget: budget.copied(),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

/// Writes `path` and the sidecar `path.manifest.toml`.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint, budget: Option<&NormBudget>) -> Result<()> {
    fs::write(path, ckpt.to_bytes())?;
    let manifest = toml::to_string_pretty(&ckpt.manifest(budget))
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

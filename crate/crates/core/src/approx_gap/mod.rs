//! Width needed by deep sets to track a one-dimensional slice of self-attention.
//!
//! Channel 1 is `k·x` and the other `N − 1` channels are `x`, with
//! `x = (2/3)·1_d`. Along the line `a ↦ (1 + a/3)·X` the attention readout
//! `g(a) = 1ᵀ·Att(Y, Y, Y)·x` is increasing and convex, while a ReLU deep-sets
//! network restricted to the same line is piecewise linear.


use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{attention, DeepSets, ValueNetwork};
use crate::tensor::{Adam, Graph, Matrix};

/// The constructed input set.
#[derive(Clone, Debug, PartialEq)]
pub struct GapTask {
    pub d: usize,
    pub channels: usize,
    pub k: f64,
}

impl GapTask {
    pub fn new(d: usize, channels: usize, k: f64) -> Result<Self> {
        if d == 0 || channels < 2 {
            return Err(Error::Config("the gap task needs d ≥ 1 and at least two channels".into()));
        }
        if !(k.is_finite()) || k == 1.0 {
            return Err(Error::Config(format!("first-channel scale k = {k} must be finite and differ from 1")));
        }
        Ok(Self { d, channels, k })
    }

    pub fn base(&self) -> Vec<f64> {
        vec![2.0 / 3.0; self.d]
    }

    /// `(1 + a/3)·X`, with the first row scaled by `k`.
    pub fn set_at(&self, a: f64) -> Matrix {
        let s = 1.0 + a / 3.0;
        Matrix::from_fn(self.channels, self.d, |r, _| s * (2.0 / 3.0) * if r == 0 { self.k } else { 1.0 })
    }

    /// The two distinct rows of `set_at(a)`: the scaled channel, then a plain one.
    pub fn distinct_rows(&self, a: f64) -> Matrix {
        let s = 1.0 + a / 3.0;
        Matrix::from_fn(2, self.d, |r, _| s * (2.0 / 3.0) * if r == 0 { self.k } else { 1.0 })
    }

    /// Leading-order second derivative of `g`, dropping the `O(1/N)` terms.
    pub fn leading_curvature(&self, a: f64) -> f64 {
        let s = 1.0 + a / 3.0;
        let c = self.base().iter().map(|v| v * v).sum::<f64>();
        let u = c;
        let km1 = self.k - 1.0;
        let e = (s * s * km1 * c).exp();
        2.0 * u * km1 * km1 * c * s * e * (2.0 * s * s * km1 * c + 3.0) / 9.0
    }
}

/// `1ᵀ·Att(Y, Y, Y)·x` at `Y = (1 + a/3)·X`.
pub fn target_g(task: &GapTask, a: f64) -> Result<f64> {
    let y = task.set_at(a);
    let att = attention(&y, &y, &y)?;
    let w = Matrix::col_vector(&task.base());
    Ok(att.matmul(&w)?.sum())
}

/// `n` evenly spaced points on `[−1, 1]`.
pub fn grid(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `h(a) = ρ(φ(x₁(a)) + (N − 1)·φ(x₂(a)))`, the network on the line.
pub fn line_values(net: &DeepSets, task: &GapTask, points: &[f64]) -> Result<Vec<f64>> {
    let n1 = (task.channels - 1) as f64;
    points
        .iter()
        .map(|&a| {
            let rows = task.distinct_rows(a);
            let enc = rows
                .matmul(&net.enc_in)?
                .add_row_broadcast(&net.enc_bias)?
                .relu()
                .matmul(&net.enc_out)?
                .add_row_broadcast(&net.enc_offset)?;
            let pooled = Matrix::row_vector(&[1.0, n1]).matmul(&enc)?;
            let out = pooled
                .matmul(&net.agg_in)?
                .add_row_broadcast(&net.agg_bias)?
                .relu()
                .matmul(&net.agg_out)?
                .add_row_broadcast(&net.agg_offset)?;
            Ok(out.item())
        })
        .collect()
}

/// Linear pieces of `h` on a uniform grid of `resolution` points over `[−1, 1]`.
///
/// Neighboring intervals whose slopes differ by more than `1e-7·max(1, |slope|)`
/// mark a kink; runs of such marks count as one kink.
pub fn piecewise_linear_count(net: &DeepSets, task: &GapTask, resolution: usize) -> Result<usize> {
    if resolution < 3 {
        return Err(Error::Config("piece counting needs at least three grid points".into()));
    }
    let pts = grid(resolution);
    let vals = line_values(net, task, &pts)?;
    let slopes: Vec<f64> = (1..pts.len()).map(|i| (vals[i] - vals[i - 1]) / (pts[i] - pts[i - 1])).collect();
    let mut kinks = 0;
    let mut in_kink = false;
    for i in 1..slopes.len() {
        let tol = 1e-7 * slopes[i].abs().max(slopes[i - 1].abs()).max(1.0);
        let change = (slopes[i] - slopes[i - 1]).abs() > tol;
        if change && !in_kink {
            kinks += 1;
        }
        in_kink = change;
    }
    Ok(kinks + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapConfig {
    pub channels: usize,
    pub k: f64,
    pub train_points: usize,
    pub eval_points: usize,
    pub steps: usize,
    pub lr: f64,
    pub widths: Vec<usize>,
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Grid used to count linear pieces.
    pub piece_resolution: usize,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            k: 1.1,
            train_points: 201,
            eval_points: 2001,
            steps: 5000,
            lr: 1e-2,
            widths: vec![1, 2, 4, 8, 16, 32],
            dims: vec![2, 8],
            seeds: vec![0, 1, 2],
            piece_resolution: 20_001,
        }
    }
}

impl GapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("widths must be positive and strictly ascending".into()));
        }
        if self.train_points < 2 || self.eval_points < 2 || !(self.lr > 0.0) {
            return Err(Error::Config("need two or more grid points and a positive rate".into()));
        }
        if self.dims.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("dims and seeds must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub d: usize,
    pub width: usize,
    pub seed: u64,
    pub train_mse: f64,
    pub sup_error: f64,
    pub piece_count: usize,
}

pub const SWEEP_HEADER: [&str; 6] = ["d", "width", "seed", "train_mse", "sup_error", "piece_count"];

/// Training data on the line in the form the optimizer sees it.
struct LineProblem {
    targets: Vec<f64>,
    mean: f64,
    sd: f64,
    scaled: Matrix,
    rows: Matrix,
    pool: Matrix,
    channels: f64,
}

impl LineProblem {
    /// Pools by the channel mean and standardizes targets, so that the
    /// optimizer is not dominated by the `N·xᵀw` trend.
    fn new(task: &GapTask, train_points: usize) -> Result<Self> {
        let pts = grid(train_points);
        let targets = pts.iter().map(|&a| target_g(task, a)).collect::<Result<Vec<_>>>()?;
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let sd = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / targets.len() as f64).sqrt().max(1e-12);
        let scaled = Matrix::col_vector(&targets.iter().map(|t| (t - mean) / sd).collect::<Vec<_>>());
        let rows = Matrix::vcat(&pts.iter().map(|&a| task.distinct_rows(a)).collect::<Vec<_>>())?;
        let n = task.channels as f64;
        let pool = Matrix::from_fn(pts.len(), 2 * pts.len(), |r, c| match c.checked_sub(2 * r) {
            Some(0) => 1.0 / n,
            Some(1) => (n - 1.0) / n,
            _ => 0.0,
        });
        Ok(Self { targets, mean, sd, scaled, rows, pool, channels: n })
    }

    /// Sum-pooled network in target units → mean-pooled network in standardized units.
    fn to_internal(&self, net: &DeepSets) -> DeepSets {
        let mut out = net.clone();
        out.agg_in.scale_in_place(self.channels);
        out.agg_out.scale_in_place(1.0 / self.sd);
        out.agg_offset = out.agg_offset.map(|o| (o - self.mean) / self.sd);
        out
    }

    fn to_external(&self, net: &DeepSets) -> DeepSets {
        let mut out = net.clone();
        out.agg_in.scale_in_place(1.0 / self.channels);
        out.agg_out.scale_in_place(self.sd);
        out.agg_offset = out.agg_offset.map(|o| o * self.sd + self.mean);
        out
    }
}

/// A fresh width-`width` network with its hidden kinks on the training line.
pub fn initial_network(task: &GapTask, width: usize, train_points: usize, seed: u64) -> Result<DeepSets> {
    let prob = LineProblem::new(task, train_points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = DeepSets::random(task.d, width, width, width, &mut rng);
    place_kinks(&mut net, &prob.rows, &prob.pool, &mut rng)?;
    Ok(prob.to_external(&net))
}

/// Embeds `net` into width `width`; new units start with zero outgoing
/// weights, so the function is unchanged.
pub fn widen(net: &DeepSets, task: &GapTask, width: usize, train_points: usize, seed: u64) -> Result<DeepSets> {
    let (w1, w2, w3) = net.widths();
    if width < w1.max(w2).max(w3) {
        return Err(Error::Config(format!("cannot widen a width-{w1} network to {width}")));
    }
    let mut out = initial_network(task, width, train_points, seed)?;
    let copy = |dst: &mut Matrix, src: &Matrix| {
        for r in 0..src.rows() {
            for c in 0..src.cols() {
                dst.set(r, c, src.get(r, c));
            }
        }
    };
    copy(&mut out.enc_in, &net.enc_in);
    copy(&mut out.enc_bias, &net.enc_bias);
    copy(&mut out.enc_offset, &net.enc_offset);
    copy(&mut out.agg_bias, &net.agg_bias);
    out.enc_out = Matrix::from_fn(width, width, |r, c| if r < w1 && c < w2 { net.enc_out.get(r, c) } else if r < w1 { out.enc_out.get(r, c) } else { 0.0 });
    out.agg_in = Matrix::from_fn(width, width, |r, c| if r < w2 && c < w3 { net.agg_in.get(r, c) } else if r < w2 { out.agg_in.get(r, c) } else { 0.0 });
    out.agg_out = Matrix::from_fn(width, 1, |r, _| if r < w3 { net.agg_out.get(r, 0) } else { 0.0 });
    out.agg_offset = net.agg_offset.clone();
    Ok(out)
}

/// Fits `init` to `g` on the training grid with full-batch, cosine-annealed
/// Adam and returns the iterate with the lowest training loss.
pub fn fit_deepsets(task: &GapTask, init: &DeepSets, cfg: &GapConfig) -> Result<(DeepSets, f64)> {
    let prob = LineProblem::new(task, cfg.train_points)?;
    let mut net = prob.to_internal(init);
    let mut opt = Adam::new(cfg.lr, &net.shapes());
    let inv = 1.0 / prob.targets.len() as f64;
    let floor = 0.01 * cfg.lr;
    let mut best = (f64::INFINITY, net.clone());
    for step in 0..=cfg.steps {
        let frac = step as f64 / cfg.steps.max(1) as f64;
        opt.set_lr(floor + 0.5 * (cfg.lr - floor) * (1.0 + (std::f64::consts::PI * frac).cos()));
        let mut g = Graph::new();
        let vars = net.register(&mut g, true);
        let x = g.constant(prob.rows.clone());
        let enc = net.build_encoder(&mut g, &vars, x)?;
        let p = g.constant(prob.pool.clone());
        let pooled = g.matmul(p, enc)?;
        let out = net.build_aggregator(&mut g, &vars, pooled)?;
        let t = g.constant(prob.scaled.clone());
        let diff = g.sub(out, t)?;
        let sq = g.square(diff);
        let total = g.sum(sq);
        let loss = g.scale(total, inv);
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Divergence(format!("deep-sets fit diverged at step {step}")));
        }
        if value < best.0 {
            best = (value, net.clone());
        }
        if step == cfg.steps {
            break;
        }
        let grads = g.backward(loss)?;
        let gs: Vec<Matrix> = vars.iter().map(|v| grads.wrt(*v)).collect();
        opt.step(&mut net.blocks_mut(), &gs);
    }
    let net = prob.to_external(&best.1);
    let fitted = line_values(&net, task, &grid(cfg.train_points))?;
    let mse = fitted.iter().zip(&prob.targets).map(|(f, t)| (f - t).powi(2)).sum::<f64>() * inv;
    Ok((net, mse))
}

/// Sets the hidden biases so that units switch at randomly chosen training
/// inputs; otherwise most units are constant along the line.
fn place_kinks(net: &mut DeepSets, rows: &Matrix, pool: &Matrix, rng: &mut ChaCha8Rng) -> Result<()> {
    let pre = rows.matmul(&net.enc_in)?;
    for j in 0..pre.cols() {
        net.enc_bias.set(0, j, kink_bias(&pre, j, rng));
    }
    let enc = rows
        .matmul(&net.enc_in)?
        .add_row_broadcast(&net.enc_bias)?
        .relu()
        .matmul(&net.enc_out)?
        .add_row_broadcast(&net.enc_offset)?;
    let pre = pool.matmul(&enc)?.matmul(&net.agg_in)?;
    for k in 0..pre.cols() {
        net.agg_bias.set(0, k, kink_bias(&pre, k, rng));
    }
    Ok(())
}

/// Column 0 is kept active on every training input so that a fresh network
/// starts with a live linear path; other columns kink at a random input.
fn kink_bias(pre: &Matrix, col: usize, rng: &mut ChaCha8Rng) -> f64 {
    if col == 0 {
        let (lo, hi) = (0..pre.rows()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(pre.get(r, col)), hi.max(pre.get(r, col)))
        });
        return -lo + 0.1 * (hi - lo).max(1e-3);
    }
    -pre.get(rng.gen_range(0..pre.rows()), col)
}

/// Largest absolute gap between `h` and `g` on the evaluation grid.
pub fn sup_error(net: &DeepSets, task: &GapTask, eval_points: usize) -> Result<f64> {
    let pts = grid(eval_points);
    let h = line_values(net, task, &pts)?;
    pts.iter().zip(&h).try_fold(0.0f64, |acc, (&a, hv)| Ok(acc.max((hv - target_g(task, a)?).abs())))
}

/// One row per `(d, width, seed)`. For each `(d, seed)` the widths are
/// fitted in ascending order, each starting from the previous fit widened
/// with fresh units; every entry is deterministic in its seed.
pub fn fit_deepsets_sweep(cfg: &GapConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let chains: Vec<(usize, u64)> =
        cfg.dims.iter().flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s))).collect();
    let rows = chains
        .into_par_iter()
        .map(|(d, seed)| {
            let task = GapTask::new(d, cfg.channels, cfg.k)?;
            let mut out = Vec::with_capacity(cfg.widths.len());
            let mut prev: Option<DeepSets> = None;
            for (i, &width) in cfg.widths.iter().enumerate() {
                let unit_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                let init = match &prev {
                    None => initial_network(&task, width, cfg.train_points, unit_seed)?,
                    Some(p) => widen(p, &task, width, cfg.train_points, unit_seed)?,
                };
                let (net, train_mse) = fit_deepsets(&task, &init, cfg)?;
                out.push(SweepRow {
                    d,
                    width,
                    seed,
                    train_mse,
                    sup_error: sup_error(&net, &task, cfg.eval_points)?,
                    piece_count: piecewise_linear_count(&net, &task, cfg.piece_resolution)?,
                });
                prev = Some(net);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Median sup error over seeds for each width at dimension `d`, in width order.
pub fn median_sup_error(rows: &[SweepRow], d: usize) -> Vec<(usize, f64)> {
    let mut widths: Vec<usize> = rows.iter().filter(|r| r.d == d).map(|r| r.width).collect();
    widths.sort_unstable();
    widths.dedup();
    widths
        .into_iter()
        .map(|w| {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.d == d && r.width == w).map(|r| r.sup_error).collect();
            v.sort_by(f64::total_cmp);
            let mid = v.len() / 2;
            let med = if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) };
            (w, med)
        })
        .collect()
}

/// Smallest width whose median sup error is at most `xi`.
pub fn width_needed(rows: &[SweepRow], d: usize, xi: f64) -> Option<usize> {
    median_sup_error(rows, d).into_iter().find(|&(_, e)| e <= xi).map(|(w, _)| w)
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(SWEEP_HEADER).map_err(fmt)?;
    for r in rows {
        w.write_record([
            r.d.to_string(),
            r.width.to_string(),
            r.seed.to_string(),
            r.train_mse.to_string(),
            r.sup_error.to_string(),
            r.piece_count.to_string(),
        ])
        .map_err(fmt)?;
    }
    w.flush()?;
    Ok(())
}

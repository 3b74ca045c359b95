//! How fast the fitted transition law approaches a known truth as data grows.

use std::io::Write;

use crate::error::{Error, Result};

use super::dynamics::{fit_mle, init_rng, tv_point, DynamicsModel, FitConfig};
use super::planner::member_seed;
use super::synthetic::SyntheticTask;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeRow {
    pub n: usize,
    pub seed: u64,
    /// Mean of `TV(fitted, truth)²` over fresh draws from the state-action distribution.
    pub mean_sq_tv: f64,
    pub final_loss: f64,
}

pub const PROBE_HEADER: [&str; 4] = ["n", "seed", "mean_sq_tv", "final_loss"];

/// Fits one model per `(n, seed)` and scores it on `eval_points` held-out pairs.
pub fn mle_consistency_probe(
    task: &SyntheticTask,
    sizes: &[usize],
    seeds: &[u64],
    fit: &FitConfig,
    eval_points: usize,
) -> Result<Vec<ProbeRow>> {
    if sizes.is_empty() || seeds.is_empty() || eval_points == 0 {
        return Err(Error::Config("the probe needs sizes, seeds and evaluation points".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len() * seeds.len());
    for &seed in seeds {
        let held_out = task.dataset(eval_points, false, seed ^ 0xe7a1_0000)?;
        for &n in sizes {
            let data = task.dataset(n, true, member_seed(seed, n))?;
            let init = DynamicsModel::random(
                &task.truth.config(),
                task.truth.state_dim,
                task.truth.n_actions,
                task.truth.sigma,
                &mut init_rng(seed),
            )?;
            let out = fit_mle(&data, init, fit, seed)?;
            let tv2 = held_out
                .transitions
                .iter()
                .map(|t| tv_point(&out.model, &task.truth, &t.state, &t.actions).map(|v| v * v))
                .sum::<Result<f64>>()?
                / eval_points as f64;
            rows.push(ProbeRow { n, seed, mean_sq_tv: tv2, final_loss: out.final_loss });
        }
    }
    Ok(rows)
}

/// Median over seeds of the squared TV, per size in the order given.
pub fn median_by_size(rows: &[ProbeRow], sizes: &[usize]) -> Vec<(usize, f64)> {
    sizes
        .iter()
        .map(|&n| {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.mean_sq_tv).collect();
            v.sort_by(f64::total_cmp);
            let med = if v.is_empty() {
                f64::NAN
            } else if v.len() % 2 == 1 {
                v[v.len() / 2]
            } else {
                0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
            };
            (n, med)
        })
        .collect()
}

pub fn write_probe<W: Write>(out: W, rows: &[ProbeRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(PROBE_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([r.n.to_string(), r.seed.to_string(), r.mean_sq_tv.to_string(), r.final_loss.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

//! Randomized search for counterexamples to the closed-form bounds.
//!
//! Every trial draws its own budget, shape and inputs from a per-trial
//! stream, so results do not depend on how trials are split across threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::networks::{rff, LayerParams};
use crate::tensor::{lp_norm, Matrix};

use super::lipschitz::{
    attention_block, attention_input_lipschitz, attention_param_bound, output_norm_bound, param_distance,
    rff_lipschitz_bounds, softmax_l1_check,
};
use super::sampling::{in_lp_ball, random_layer, random_params, rows_in_ball};
use super::NormBudget;

/// A bound counts as violated when `lhs > rhs·(1 + REL_SLACK) + ABS_SLACK`.
pub const REL_SLACK: f64 = 1e-9;
pub const ABS_SLACK: f64 = 1e-12;

const NORM_ORDERS: [f64; 5] = [1.0, 1.5, 2.0, 3.0, f64::INFINITY];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Proposition {
    /// Value-head output gap against the parameter distance.
    NetworkDistance,
    AttentionInput,
    AttentionParam,
    RffInput,
    RffParam,
    OutputNorm,
    SoftmaxL1,
}

impl Proposition {
    pub const ALL: [Proposition; 7] = [
        Self::NetworkDistance,
        Self::AttentionInput,
        Self::AttentionParam,
        Self::RffInput,
        Self::RffParam,
        Self::OutputNorm,
        Self::SoftmaxL1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NetworkDistance => "network_param_distance",
            Self::AttentionInput => "attention_input_lipschitz",
            Self::AttentionParam => "attention_param_lipschitz",
            Self::RffInput => "rff_input_lipschitz",
            Self::RffParam => "rff_param_lipschitz",
            Self::OutputNorm => "layer_output_norm",
            Self::SoftmaxL1 => "softmax_l1_lipschitz",
        }
    }

    fn stream(self) -> u64 {
        Self::ALL.iter().position(|p| *p == self).expect("listed") as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropositionReport {
    pub proposition: &'static str,
    pub trials: usize,
    pub max_ratio: f64,
    pub violations: usize,
}

fn trial_rng(seed: u64, prop: Proposition, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(prop.stream());
    rng.set_word_pos((trial as u128) << 20);
    rng
}

fn random_budget<R: Rng>(rng: &mut R, p: f64) -> NormBudget {
    let mut c = || rng.gen_range(1.01..3.0);
    NormBudget::new(c(), c(), c(), c(), c(), p).expect("valid draw")
}

fn max_row_norm(x: &Matrix, p: f64) -> f64 {
    x.max_row_norm(p)
}

/// Perturbs `x` by noise of random scale, then pulls rows back into the `b_x` ball.
fn nearby_rows<R: Rng>(rng: &mut R, x: &Matrix, p: f64, b_x: f64) -> Matrix {
    if rng.gen_bool(0.3) {
        return rows_in_ball(rng, x.rows(), x.cols(), p, b_x);
    }
    let scale = 10f64.powf(rng.gen_range(-4.0..-0.5)) * b_x;
    let noise = rows_in_ball(rng, x.rows(), x.cols(), p, scale);
    let moved = x.add(&noise).expect("same shape");
    let mut out = moved.clone();
    for r in 0..out.rows() {
        let n = lp_norm(moved.row(r), p);
        if n > b_x {
            for v in out.row_mut(r) {
                *v *= b_x / n;
            }
        }
    }
    out
}

fn nearby_layer<R: Rng>(rng: &mut R, layer: &LayerParams, m: usize, d: usize, budget: &NormBudget) -> LayerParams {
    let fresh = random_layer(rng, m, d, budget);
    if rng.gen_bool(0.3) {
        return fresh;
    }
    // Blend towards an independent draw; convex combinations stay in every ball.
    let t = 10f64.powf(rng.gen_range(-4.0..-0.3));
    let mix = |a: &Matrix, b: &Matrix| a.scale(1.0 - t).add(&b.scale(t)).expect("same shape");
    LayerParams {
        w_qk: mix(&layer.w_qk, &fresh.w_qk),
        w_v: mix(&layer.w_v, &fresh.w_v),
        ff_out: mix(&layer.ff_out, &fresh.ff_out),
        ff_in: mix(&layer.ff_in, &fresh.ff_in),
    }
}

struct Shape {
    n: usize,
    d: usize,
    m: usize,
    p: f64,
    b_x: f64,
    budget: NormBudget,
}

fn random_shape<R: Rng>(rng: &mut R, p: Option<f64>) -> Shape {
    let p = p.unwrap_or_else(|| NORM_ORDERS[rng.gen_range(0..NORM_ORDERS.len())]);
    Shape {
        n: rng.gen_range(1..=5),
        d: rng.gen_range(1..=4),
        m: rng.gen_range(1..=3),
        p,
        b_x: rng.gen_range(0.05..1.5),
        budget: random_budget(rng, p),
    }
}

/// One `(lhs, rhs)` sample of the given proposition.
pub fn sample(prop: Proposition, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    match prop {
        Proposition::NetworkDistance => {
            // The radial projection is nonexpansive in the Euclidean norm only.
            let s = random_shape(rng, Some(2.0));
            let layers = rng.gen_range(1..=3);
            let a = random_params(rng, layers, s.m, s.d, &s.budget, true, 1e6);
            let mut b = a.clone();
            for l in &mut b.layers {
                *l = nearby_layer(rng, l, s.m, s.d, &s.budget);
            }
            let w = Matrix::col_vector(&in_lp_ball(rng, s.d, s.budget.q, s.budget.readout));
            let t = 10f64.powf(rng.gen_range(-4.0..0.0));
            let wa = a.readout.as_ref().expect("value head");
            b.readout = Some(wa.scale(1.0 - t).add(&w.scale(t))?);
            let x = rows_in_ball(rng, s.n, s.d, 2.0, 1.0);
            let lhs = (a.value_forward(&x)? - b.value_forward(&x)?).abs();
            Ok((lhs, param_distance(&a, &b, &s.budget)?))
        }
        Proposition::AttentionInput => {
            let s = random_shape(rng, None);
            let layer = random_layer(rng, s.m, s.d, &s.budget);
            let x = rows_in_ball(rng, s.n, s.d, s.p, s.b_x);
            let y = nearby_rows(rng, &x, s.p, s.b_x);
            let lhs = max_row_norm(&attention_block(&layer, &x)?.sub(&attention_block(&layer, &y)?)?, s.p);
            let rhs = attention_input_lipschitz(&s.budget, s.b_x, s.d)? * max_row_norm(&x.sub(&y)?, s.p);
            Ok((lhs, rhs))
        }
        Proposition::AttentionParam => {
            let s = random_shape(rng, None);
            let a = random_layer(rng, s.m, s.d, &s.budget);
            let b = nearby_layer(rng, &a, s.m, s.d, &s.budget);
            let x = rows_in_ball(rng, s.n, s.d, s.p, s.b_x);
            let lhs = max_row_norm(&attention_block(&a, &x)?.sub(&attention_block(&b, &x)?)?, s.p);
            let rhs = attention_param_bound(&s.budget, s.b_x, &a.w_qk.sub(&b.w_qk)?, &a.w_v.sub(&b.w_v)?)?;
            Ok((lhs, rhs))
        }
        Proposition::RffInput => {
            let s = random_shape(rng, None);
            let layer = random_layer(rng, s.m, s.d, &s.budget);
            let x = rows_in_ball(rng, s.n, s.d, s.p, s.b_x);
            let y = nearby_rows(rng, &x, s.p, s.b_x);
            let f = |z: &Matrix| rff(z, &layer.ff_out, &layer.ff_in, s.m);
            let lhs = max_row_norm(&f(&x)?.sub(&f(&y)?)?, s.p);
            let rhs = rff_lipschitz_bounds(&s.budget, s.b_x, s.d, s.m).input * max_row_norm(&x.sub(&y)?, s.p);
            Ok((lhs, rhs))
        }
        Proposition::RffParam => {
            let s = random_shape(rng, None);
            let a = random_layer(rng, s.m, s.d, &s.budget);
            let b = nearby_layer(rng, &a, s.m, s.d, &s.budget);
            let x = rows_in_ball(rng, s.n, s.d, s.p, s.b_x);
            let lhs = max_row_norm(
                &rff(&x, &a.ff_out, &a.ff_in, s.m)?.sub(&rff(&x, &b.ff_out, &b.ff_in, s.m)?)?,
                s.p,
            );
            let rhs = rff_lipschitz_bounds(&s.budget, s.b_x, s.d, s.m)
                .parameter_bound(&a.ff_out.sub(&b.ff_out)?, &a.ff_in.sub(&b.ff_in)?);
            Ok((lhs, rhs))
        }
        Proposition::OutputNorm => {
            let s = random_shape(rng, None);
            let layer = random_layer(rng, s.m, s.d, &s.budget);
            let x = rows_in_ball(rng, s.n, s.d, s.p, s.b_x);
            let lhs = max_row_norm(&layer.pre_projection(&x, s.m)?, s.p);
            Ok((lhs, output_norm_bound(&s.budget, s.b_x, s.d, s.m)))
        }
        Proposition::SoftmaxL1 => {
            let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let y: Vec<f64> = if rng.gen_bool(0.5) {
                (0..8).map(|_| rng.gen_range(-10.0..10.0)).collect()
            } else {
                let s = 10f64.powf(rng.gen_range(-5.0..0.0));
                x.iter().map(|v| v + s * rng.gen_range(-1.0..1.0)).collect()
            };
            softmax_l1_check(&x, &y)
        }
    }
}

pub fn is_violation(lhs: f64, rhs: f64) -> bool {
    !(lhs <= rhs * (1.0 + REL_SLACK) + ABS_SLACK)
}

/// Runs `trials` independent samples of `prop`, sharded over the rayon pool.
pub fn falsify(prop: Proposition, trials: usize, seed: u64) -> Result<PropositionReport> {
    let outcomes: Vec<(f64, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let (lhs, rhs) = sample(prop, &mut trial_rng(seed, prop, t))?;
            let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
            Ok((ratio, is_violation(lhs, rhs)))
        })
        .collect::<Result<_>>()?;
    Ok(PropositionReport {
        proposition: prop.name(),
        trials,
        max_ratio: outcomes.iter().map(|o| o.0).fold(0.0, f64::max),
        violations: outcomes.iter().filter(|o| o.1).count(),
    })
}

pub fn falsify_all(trials: usize, seed: u64) -> Result<Vec<PropositionReport>> {
    Proposition::ALL.iter().map(|p| falsify(*p, trials, seed)).collect()
}

pub const REPORT_HEADER: [&str; 4] = ["proposition", "trials", "max_ratio", "violations"];

pub fn write_report<W: Write>(out: W, reports: &[PropositionReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

//! Closed-form Lipschitz and norm bounds for the set-transformer blocks.

use crate::error::{Error, Result};
use crate::networks::{LayerParams, SetTransformerParams};
use crate::tensor::{lp_norm, Matrix};

use super::{conjugate_constant, NormBudget};

fn inv(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        1.0 / x
    }
}

/// `d^{1/p}`, which is 1 for `p = ∞`.
pub fn width_factor(d: usize, p: f64) -> f64 {
    (d as f64).powf(inv(p))
}

/// `‖(Σ_j |a_kj|)_k‖_p` for rFF output weights laid out as `k·m + j`.
pub fn ff_out_group_norm(ff_out: &Matrix, m: usize, p: f64) -> f64 {
    let sums: Vec<f64> = ff_out.data().chunks(m).map(|g| g.iter().map(|a| a.abs()).sum()).collect();
    lp_norm(&sums, p)
}

/// `‖(Σ_j ‖b_kj‖_q)_k‖_p` for rFF input columns laid out as `k·m + j`.
pub fn ff_in_group_norm(ff_in: &Matrix, m: usize, p: f64, q: f64) -> f64 {
    let per_col: Vec<f64> = (0..ff_in.cols()).map(|c| lp_norm(&ff_in.column(c), q)).collect();
    let sums: Vec<f64> = per_col.chunks(m).map(|g| g.iter().sum()).collect();
    lp_norm(&sums, p)
}

/// Per-layer growth factor `B_V(1 + 4c·B_QK) + d^{1/p}·m·B_a·B_b` for unit-ball inputs.
pub fn layer_growth(budget: &NormBudget, d: usize, m: usize) -> Result<f64> {
    Ok(attention_input_lipschitz(budget, 1.0, d)? + rff_input_lipschitz(budget, d, m))
}

/// Upper bound on `sup_X |g(X;θ) − g(X;θ̃)|` for value heads inside `budget`.
pub fn param_distance(a: &SetTransformerParams, b: &SetTransformerParams, budget: &NormBudget) -> Result<f64> {
    if !a.same_architecture(b) {
        return Err(Error::Contract("parameter sets have different architectures".into()));
    }
    let (wa, wb) = match (&a.readout, &b.readout) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::Contract("distance is defined for value heads with a readout".into())),
    };
    let (p, q, d, m) = (budget.p, budget.q, a.d, a.m);
    let c = conjugate_constant(p, q, d)?;
    let growth = layer_growth(budget, d, m)?;
    let depth = a.num_layers();
    let mut total = 0.0;
    for (i, (la, lb)) in a.layers.iter().zip(&b.layers).enumerate() {
        let alpha = budget.readout * growth.powi((depth - 1 - i) as i32);
        let d_qk = la.w_qk.sub(&lb.w_qk)?.transposed_pq_norm(p, q);
        let d_v = la.w_v.sub(&lb.w_v)?.transposed_pq_norm(p, q);
        let d_out = ff_out_group_norm(&la.ff_out.sub(&lb.ff_out)?, m, p);
        let d_in = ff_in_group_norm(&la.ff_in.sub(&lb.ff_in)?, m, p, q);
        let beta = 2.0 * c * budget.value * d_qk;
        let kappa = budget.ff_in * d_out;
        let rho = budget.ff_out * d_in;
        total += alpha * (beta + d_v + kappa + rho);
    }
    Ok(total + lp_norm(wa.sub(wb)?.data(), q))
}

/// Input Lipschitz coefficient `B_V(1 + 4c·B_X²·B_QK)` of self-attention.
pub fn attention_input_lipschitz(budget: &NormBudget, b_x: f64, d: usize) -> Result<f64> {
    let c = conjugate_constant(budget.p, budget.q, d)?;
    Ok(budget.value * (1.0 + 4.0 * c * b_x * b_x * budget.qk))
}

/// Output change bound `2c·B_X³·B_V·‖ΔW_QKᵀ‖ + B_X·‖ΔW_Vᵀ‖` under a weight perturbation.
pub fn attention_param_bound(budget: &NormBudget, b_x: f64, d_qk: &Matrix, d_v: &Matrix) -> Result<f64> {
    let (p, q) = (budget.p, budget.q);
    let c = conjugate_constant(p, q, d_qk.rows())?;
    Ok(2.0 * c * b_x.powi(3) * budget.value * d_qk.transposed_pq_norm(p, q) + b_x * d_v.transposed_pq_norm(p, q))
}

/// `d^{1/p}·m·B_a·B_b`.
pub fn rff_input_lipschitz(budget: &NormBudget, d: usize, m: usize) -> f64 {
    width_factor(d, budget.p) * m as f64 * budget.ff_out * budget.ff_in
}

/// The two halves of the rFF perturbation bound.
#[derive(Clone, Copy, Debug)]
pub struct RffLipschitz {
    /// Coefficient on `‖Xᵀ − X̃ᵀ‖_{p,∞}`.
    pub input: f64,
    budget: NormBudget,
    b_x: f64,
    m: usize,
}

impl RffLipschitz {
    /// `B_b·B_X·‖(Σ_j|Δa_kj|)_k‖_p + B_a·B_X·‖(Σ_j‖Δb_kj‖_q)_k‖_p`.
    pub fn parameter_bound(&self, d_ff_out: &Matrix, d_ff_in: &Matrix) -> f64 {
        let b = &self.budget;
        b.ff_in * self.b_x * ff_out_group_norm(d_ff_out, self.m, b.p)
            + b.ff_out * self.b_x * ff_in_group_norm(d_ff_in, self.m, b.p, b.q)
    }
}

pub fn rff_lipschitz_bounds(budget: &NormBudget, b_x: f64, d: usize, m: usize) -> RffLipschitz {
    RffLipschitz { input: rff_input_lipschitz(budget, d, m), budget: *budget, b_x, m }
}

/// `B_V·B_X + d^{1/p}·m·B_a·B_b·B_X`, a ceiling on every unprojected layer row norm.
pub fn output_norm_bound(budget: &NormBudget, b_x: f64, d: usize, m: usize) -> f64 {
    budget.value * b_x + rff_input_lipschitz(budget, d, m) * b_x
}

/// `(‖SM(x) − SM(y)‖₁, 2‖x − y‖_∞)`.
pub fn softmax_l1_check(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Contract(format!("softmax check needs equal nonempty lengths, got {} and {}", x.len(), y.len())));
    }
    let sx = Matrix::row_vector(x).row_softmax();
    let sy = Matrix::row_vector(y).row_softmax();
    let lhs = sx.data().iter().zip(sy.data()).map(|(a, b)| (a - b).abs()).sum();
    let rhs = 2.0 * x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((lhs, rhs))
}

/// Self-attention part of a layer, `SM(X W_QK Xᵀ)·X·W_V`.
pub fn attention_block(layer: &LayerParams, x: &Matrix) -> Result<Matrix> {
    crate::networks::attention(&x.matmul(&layer.w_qk)?, x, &x.matmul(&layer.w_v)?)
}

//! Random draws from norm balls and from the bounded parameter class.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};

use super::NormBudget;
use crate::networks::{LayerParams, SetTransformerParams};
use crate::tensor::{lp_norm, Matrix};

/// Uniform sample from the ℓ_p ball of the given radius in `n` dimensions.
///
/// Uses the generalized-Gaussian construction: with `gᵢ` having density
/// `∝ exp(−|t|^p)` and `z ~ Exp(1)`, the vector `g / (‖g‖_p^p + z)^{1/p}`
/// is uniform on the unit ball.
pub fn in_lp_ball<R: Rng + ?Sized>(rng: &mut R, n: usize, p: f64, radius: f64) -> Vec<f64> {
    if p.is_infinite() {
        return (0..n).map(|_| radius * rng.gen_range(-1.0..1.0)).collect();
    }
    let gamma = Gamma::new(1.0 / p, 1.0).expect("valid shape");
    let g: Vec<f64> = (0..n)
        .map(|_| {
            let mag: f64 = gamma.sample(rng).powf(1.0 / p);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let z: f64 = Exp1.sample(rng);
    let denom = (g.iter().map(|x| x.abs().powf(p)).sum::<f64>() + z).powf(1.0 / p);
    g.iter().map(|x| radius * x / denom).collect()
}

/// A point on the ℓ_p sphere of the given radius.
pub fn on_lp_sphere<R: Rng + ?Sized>(rng: &mut R, n: usize, p: f64, radius: f64) -> Vec<f64> {
    loop {
        let v = in_lp_ball(rng, n, p, 1.0);
        let norm = lp_norm(&v, p);
        if norm > 1e-12 {
            return v.iter().map(|x| radius * x / norm).collect();
        }
    }
}

/// N×d matrix whose rows are independent uniform draws from the ℓ_p ball of radius `radius`.
pub fn rows_in_ball<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, p: f64, radius: f64) -> Matrix {
    let data = (0..n).flat_map(|_| in_lp_ball(rng, d, p, radius)).collect();
    Matrix::new(n, d, data).expect("finite draws")
}

/// d×d matrix with `‖Wᵀ‖_{p,q} ≤ cap`: row norms drawn from the q-ball, row
/// directions from the p-sphere.
pub fn pq_ball_matrix<R: Rng + ?Sized>(rng: &mut R, d: usize, p: f64, q: f64, cap: f64) -> Matrix {
    let row_norms = in_lp_ball(rng, d, q, cap);
    let data = row_norms.iter().flat_map(|t| on_lp_sphere(rng, d, p, t.abs())).collect();
    Matrix::new(d, d, data).expect("finite draws")
}

/// Draws one layer uniformly-ish from the budget's constraint set.
pub fn random_layer<R: Rng + ?Sized>(rng: &mut R, m: usize, d: usize, budget: &NormBudget) -> LayerParams {
    let ff_out = Matrix::from_fn(1, d * m, |_, _| rng.gen_range(-budget.ff_out..budget.ff_out));
    let mut ff_in = Matrix::zeros(d, d * m);
    for c in 0..d * m {
        let col = in_lp_ball(rng, d, budget.q, budget.ff_in);
        for (r, v) in col.into_iter().enumerate() {
            ff_in.set(r, c, v);
        }
    }
    LayerParams {
        w_qk: pq_ball_matrix(rng, d, budget.p, budget.q, budget.qk),
        w_v: pq_ball_matrix(rng, d, budget.p, budget.q, budget.value),
        ff_out,
        ff_in,
    }
}

/// A budget-respecting parameter set with the budget's projection order.
pub fn random_params<R: Rng + ?Sized>(
    rng: &mut R,
    layers: usize,
    m: usize,
    d: usize,
    budget: &NormBudget,
    readout: bool,
    v_max: f64,
) -> SetTransformerParams {
    let layers = (0..layers).map(|_| random_layer(rng, m, d, budget)).collect();
    let readout = readout.then(|| Matrix::col_vector(&in_lp_ball(rng, d, budget.q, budget.readout)));
    SetTransformerParams { layers, readout, v_max, p: budget.p, m, d }
}

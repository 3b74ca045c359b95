//! Stacked self-attention layers with a row-wise ReLU feedforward branch.
//!
//! Every layer maps an `N×d` channel matrix `G` to
//! `Π_norm[SM(G·W_QK·Gᵀ)·G·W_V + rFF(G)]`, which is permutation equivariant
//! in the rows. The value head averages the final rows, applies the readout
//! and clips; the dynamics head skips the last projection and keeps the
//! first `d_S` columns.

use rand::Rng;

use crate::bounds::NormBudget;
use crate::error::{dim, Error, Result};
use crate::tensor::{lp_norm, Graph, Matrix, Var};

use super::{attention, rff, ValueNetwork};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// Merged query-key matrix, d×d.
    pub w_qk: Matrix,
    /// Value matrix, d×d.
    pub w_v: Matrix,
    /// rFF output weights as a 1×(d·m) row; entry `k·m + j` is `a_kj`.
    pub ff_out: Matrix,
    /// rFF input weights, d×(d·m); column `k·m + j` is `b_kj`.
    pub ff_in: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetTransformerParams {
    pub layers: Vec<LayerParams>,
    /// d×1 readout, present on value heads only.
    pub readout: Option<Matrix>,
    pub v_max: f64,
    pub p: f64,
    pub m: usize,
    pub d: usize,
}

/// Graph handles for one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub w_qk: Var,
    pub w_v: Var,
    pub ff_out: Var,
    pub ff_in: Var,
}

impl LayerParams {
    pub fn zeros(d: usize, m: usize) -> Self {
        Self {
            w_qk: Matrix::zeros(d, d),
            w_v: Matrix::zeros(d, d),
            ff_out: Matrix::zeros(1, d * m),
            ff_in: Matrix::zeros(d, d * m),
        }
    }

    fn random<R: Rng>(d: usize, m: usize, rng: &mut R) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        let mut u = |r, c| Matrix::from_fn(r, c, |_, _| rng.gen_range(-s..=s));
        Self { w_qk: u(d, d), w_v: u(d, d), ff_out: u(1, d * m), ff_in: u(d, d * m) }
    }

    /// Plain evaluation of `SM(G W_QK Gᵀ) G W_V + rFF(G)` without projection.
    pub fn pre_projection(&self, g: &Matrix, m: usize) -> Result<Matrix> {
        let q = g.matmul(&self.w_qk)?;
        let v = g.matmul(&self.w_v)?;
        attention(&q, g, &v)?.add(&rff(g, &self.ff_out, &self.ff_in, m)?)
    }
}

impl SetTransformerParams {
    pub fn zeros(layers: usize, m: usize, d: usize, p: f64, readout: bool, v_max: f64) -> Self {
        Self {
            layers: (0..layers).map(|_| LayerParams::zeros(d, m)).collect(),
            readout: readout.then(|| Matrix::zeros(d, 1)),
            v_max,
            p,
            m,
            d,
        }
    }

    /// Entries uniform on `[−1/√d, 1/√d]`; callers project onto a budget afterwards.
    pub fn random<R: Rng>(layers: usize, m: usize, d: usize, p: f64, readout: bool, v_max: f64, rng: &mut R) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        let layers = (0..layers).map(|_| LayerParams::random(d, m, rng)).collect();
        let readout = readout.then(|| Matrix::from_fn(d, 1, |_, _| rng.gen_range(-s..=s)));
        Self { layers, readout, v_max, p, m, d }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Parameter blocks in declaration order: per layer `W_QK, W_V, a, b`, then the readout.
    pub fn blocks(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(4 * self.layers.len() + 1);
        for l in &self.layers {
            out.extend([&l.w_qk, &l.w_v, &l.ff_out, &l.ff_in]);
        }
        out.extend(self.readout.as_ref());
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(4 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.extend([&mut l.w_qk, &mut l.w_v, &mut l.ff_out, &mut l.ff_in]);
        }
        out.extend(self.readout.as_mut());
        out
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.m == other.m
            && self.d == other.d
            && self.readout.is_some() == other.readout.is_some()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.d {
            return Err(dim("set transformer", format!("input has {} columns, expected {}", x.cols(), self.d)));
        }
        Ok(())
    }

    /// All intermediate channel matrices `G⁰ … G^L` of the value head.
    pub fn hidden_states(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        let mut states = vec![x.row_project_lp(self.p)?];
        for layer in &self.layers {
            let g = states.last().expect("nonempty");
            states.push(layer.pre_projection(g, self.m)?.row_project_lp(self.p)?);
        }
        Ok(states)
    }

    /// `Π_V((1/N)·1ᵀ G^L w)`.
    pub fn value_forward(&self, x: &Matrix) -> Result<f64> {
        let w = self
            .readout
            .as_ref()
            .ok_or_else(|| Error::Contract("value head needs a readout vector".into()))?;
        let states = self.hidden_states(x)?;
        let g = states.last().expect("nonempty");
        let pooled = g.column_sums().scale(1.0 / g.rows() as f64);
        Ok(pooled.matmul(w)?.item().clamp(-self.v_max, self.v_max))
    }

    /// Equivariant next-state mean: first `d_s` columns of the unprojected last layer.
    pub fn dynamics_forward(&self, x: &Matrix, d_s: usize) -> Result<Matrix> {
        self.check_input(x)?;
        let (last, body) = self
            .layers
            .split_last()
            .ok_or_else(|| Error::Contract("dynamics head needs at least one layer".into()))?;
        let mut g = x.row_project_lp(self.p)?;
        for layer in body {
            g = layer.pre_projection(&g, self.m)?.row_project_lp(self.p)?;
        }
        last.pre_projection(&g, self.m)?.slice_cols(0, d_s)
    }

    pub fn register(&self, g: &mut Graph, differentiable: bool) -> (Vec<LayerVars>, Option<Var>) {
        let mut leaf = |m: &Matrix| if differentiable { g.param(m.clone()) } else { g.constant(m.clone()) };
        let layers = self
            .layers
            .iter()
            .map(|l| LayerVars { w_qk: leaf(&l.w_qk), w_v: leaf(&l.w_v), ff_out: leaf(&l.ff_out), ff_in: leaf(&l.ff_in) })
            .collect();
        let readout = self.readout.as_ref().map(leaf);
        (layers, readout)
    }

    /// Splits a flat block list (declaration order) into per-layer handles.
    pub fn split_vars(&self, vars: &[Var]) -> (Vec<LayerVars>, Option<Var>) {
        let layers = vars
            .chunks(4)
            .take(self.layers.len())
            .map(|c| LayerVars { w_qk: c[0], w_v: c[1], ff_out: c[2], ff_in: c[3] })
            .collect();
        let readout = self.readout.as_ref().map(|_| vars[4 * self.layers.len()]);
        (layers, readout)
    }

    fn build_layer(&self, graph: &mut Graph, lv: &LayerVars, g: Var, project: bool) -> Result<Var> {
        let q = graph.matmul(g, lv.w_qk)?;
        let scores = graph.matmul_t(q, g)?;
        let attn = graph.row_softmax(scores);
        let v = graph.matmul(g, lv.w_v)?;
        let mixed = graph.matmul(attn, v)?;
        let pre = graph.matmul(g, lv.ff_in)?;
        let hidden = graph.relu(pre);
        let weighted = graph.mul_row(hidden, lv.ff_out)?;
        let ff = graph.group_sum_cols(weighted, self.m)?;
        let sum = graph.add(mixed, ff)?;
        if project {
            graph.row_project_lp(sum, self.p)
        } else {
            Ok(sum)
        }
    }

    pub fn build_value(&self, graph: &mut Graph, layers: &[LayerVars], readout: Var, x: Var) -> Result<Var> {
        self.check_input(graph.value(x))?;
        let n = graph.value(x).rows();
        let mut g = graph.row_project_lp(x, self.p)?;
        for lv in layers {
            g = self.build_layer(graph, lv, g, true)?;
        }
        let mean = graph.constant(Matrix::filled(1, n, 1.0 / n as f64));
        let pooled = graph.matmul(mean, g)?;
        let out = graph.matmul(pooled, readout)?;
        graph.clip(out, self.v_max)
    }

    pub fn build_dynamics(&self, graph: &mut Graph, layers: &[LayerVars], x: Var, d_s: usize) -> Result<Var> {
        self.check_input(graph.value(x))?;
        let (last, body) =
            layers.split_last().ok_or_else(|| Error::Contract("dynamics head needs at least one layer".into()))?;
        let mut g = graph.row_project_lp(x, self.p)?;
        for lv in body {
            g = self.build_layer(graph, lv, g, true)?;
        }
        let out = self.build_layer(graph, last, g, false)?;
        graph.slice_cols(out, 0, d_s)
    }

    /// Radially rescales every constrained block that exceeds its ceiling.
    pub fn project(&mut self, budget: &NormBudget) {
        let (p, q) = (budget.p, budget.q);
        for l in &mut self.layers {
            for a in l.ff_out.data_mut() {
                *a = a.clamp(-budget.ff_out, budget.ff_out);
            }
            let cols = l.ff_in.cols();
            for c in 0..cols {
                let n = lp_norm(&l.ff_in.column(c), q);
                if n > budget.ff_in {
                    let s = budget.ff_in / n;
                    for r in 0..l.ff_in.rows() {
                        let v = l.ff_in.get(r, c);
                        l.ff_in.set(r, c, v * s);
                    }
                }
            }
            for (w, cap) in [(&mut l.w_qk, budget.qk), (&mut l.w_v, budget.value)] {
                let n = w.transposed_pq_norm(p, q);
                if n > cap {
                    w.scale_in_place(cap / n);
                }
            }
        }
        if let Some(w) = &mut self.readout {
            let n = lp_norm(w.data(), q);
            if n > budget.readout {
                w.scale_in_place(budget.readout / n);
            }
        }
    }

    /// Membership in the bounded class, allowing rounding slack of `1e-12` relative.
    pub fn within(&self, budget: &NormBudget) -> bool {
        let ok = |n: f64, cap: f64| n <= cap * (1.0 + 1e-12);
        let (p, q) = (budget.p, budget.q);
        self.layers.iter().all(|l| {
            l.ff_out.data().iter().all(|a| ok(a.abs(), budget.ff_out))
                && (0..l.ff_in.cols()).all(|c| ok(lp_norm(&l.ff_in.column(c), q), budget.ff_in))
                && ok(l.w_qk.transposed_pq_norm(p, q), budget.qk)
                && ok(l.w_v.transposed_pq_norm(p, q), budget.value)
        }) && self.readout.as_ref().map_or(true, |w| ok(lp_norm(w.data(), q), budget.readout))
    }
}

/// Set-transformer value function tied to the budget it is kept inside.
#[derive(Clone, Debug)]
pub struct SetTransformerValue {
    pub params: SetTransformerParams,
    pub budget: NormBudget,
}

impl SetTransformerValue {
    pub fn random<R: Rng>(layers: usize, m: usize, d: usize, v_max: f64, budget: NormBudget, rng: &mut R) -> Self {
        let mut params = SetTransformerParams::random(layers, m, d, budget.p, true, v_max, rng);
        params.project(&budget);
        Self { params, budget }
    }
}

impl ValueNetwork for SetTransformerValue {
    fn blocks(&self) -> Vec<&Matrix> {
        self.params.blocks()
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        self.params.blocks_mut()
    }

    fn build(&self, graph: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let (layers, readout) = self.params.split_vars(vars);
        self.params.build_value(graph, &layers, readout.expect("value head has a readout"), x)
    }

    fn project(&mut self) {
        self.params.project(&self.budget);
    }

    fn within_budget(&self) -> bool {
        self.params.within(&self.budget)
    }

    fn input_dim(&self) -> usize {
        self.params.d
    }
}

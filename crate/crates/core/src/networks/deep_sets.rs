//! `ρ(Σᵢ φ(xᵢ))` with one-hidden-layer ReLU networks for both `φ` and `ρ`.

use rand::Rng;

use crate::error::{dim, Result};
use crate::tensor::{Graph, Matrix, Var};

use super::ValueNetwork;

#[derive(Clone, Debug, PartialEq)]
pub struct DeepSets {
    /// Encoder input weights, d×W1 (columns are the `a_j`).
    pub enc_in: Matrix,
    /// Encoder hidden biases, 1×W1.
    pub enc_bias: Matrix,
    /// Encoder output weights, W1×W2 (entry `(j, i)` is `c_ij`).
    pub enc_out: Matrix,
    /// Encoder output offsets, 1×W2.
    pub enc_offset: Matrix,
    /// Aggregator input weights, W2×W3 (columns are the `e_k`).
    pub agg_in: Matrix,
    /// Aggregator hidden biases, 1×W3.
    pub agg_bias: Matrix,
    /// Aggregator output weights, W3×1.
    pub agg_out: Matrix,
    /// Aggregator output offset, 1×1.
    pub agg_offset: Matrix,
}

impl DeepSets {
    pub fn zeros(d: usize, w1: usize, w2: usize, w3: usize) -> Self {
        Self {
            enc_in: Matrix::zeros(d, w1),
            enc_bias: Matrix::zeros(1, w1),
            enc_out: Matrix::zeros(w1, w2),
            enc_offset: Matrix::zeros(1, w2),
            agg_in: Matrix::zeros(w2, w3),
            agg_bias: Matrix::zeros(1, w3),
            agg_out: Matrix::zeros(w3, 1),
            agg_offset: Matrix::zeros(1, 1),
        }
    }

    /// Weights uniform on `±1/√fan_in`, biases uniform on `±0.1`.
    pub fn random<R: Rng>(d: usize, w1: usize, w2: usize, w3: usize, rng: &mut R) -> Self {
        let mut u = |r: usize, c: usize, s: f64| Matrix::from_fn(r, c, |_, _| rng.gen_range(-s..=s));
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        Self {
            enc_in: u(d, w1, fan(d)),
            enc_bias: u(1, w1, 0.1),
            enc_out: u(w1, w2, fan(w1)),
            enc_offset: u(1, w2, 0.1),
            agg_in: u(w2, w3, fan(w2)),
            agg_bias: u(1, w3, 0.1),
            agg_out: u(w3, 1, fan(w3)),
            agg_offset: Matrix::zeros(1, 1),
        }
    }

    pub fn widths(&self) -> (usize, usize, usize) {
        (self.enc_in.cols(), self.enc_out.cols(), self.agg_in.cols())
    }

    /// `φ` applied row-wise: rows×d → rows×W2.
    pub fn build_encoder(&self, g: &mut Graph, vars: &[Var], rows: Var) -> Result<Var> {
        if g.value(rows).cols() != self.enc_in.rows() {
            return Err(dim("deep sets", format!("input has {} columns, expected {}", g.value(rows).cols(), self.enc_in.rows())));
        }
        let pre = g.matmul(rows, vars[0])?;
        let pre = g.add_row(pre, vars[1])?;
        let h = g.relu(pre);
        let out = g.matmul(h, vars[2])?;
        g.add_row(out, vars[3])
    }

    /// `ρ` applied to each row of pooled encodings: B×W2 → B×1.
    pub fn build_aggregator(&self, g: &mut Graph, vars: &[Var], pooled: Var) -> Result<Var> {
        let pre = g.matmul(pooled, vars[4])?;
        let pre = g.add_row(pre, vars[5])?;
        let h = g.relu(pre);
        let out = g.matmul(h, vars[6])?;
        g.add_row(out, vars[7])
    }
}

impl ValueNetwork for DeepSets {
    fn blocks(&self) -> Vec<&Matrix> {
        vec![
            &self.enc_in,
            &self.enc_bias,
            &self.enc_out,
            &self.enc_offset,
            &self.agg_in,
            &self.agg_bias,
            &self.agg_out,
            &self.agg_offset,
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.enc_in,
            &mut self.enc_bias,
            &mut self.enc_out,
            &mut self.enc_offset,
            &mut self.agg_in,
            &mut self.agg_bias,
            &mut self.agg_out,
            &mut self.agg_offset,
        ]
    }

    fn build(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let n = g.value(x).rows();
        let enc = self.build_encoder(g, vars, x)?;
        let ones = g.constant(Matrix::filled(1, n, 1.0));
        let pooled = g.matmul(ones, enc)?;
        self.build_aggregator(g, vars, pooled)
    }

    fn input_dim(&self) -> usize {
        self.enc_in.rows()
    }
}

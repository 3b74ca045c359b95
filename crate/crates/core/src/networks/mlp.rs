//! Order-sensitive baseline: the N×d input is flattened row-major and fed
//! through two ReLU hidden layers.

use rand::Rng;

use crate::error::{dim, Result};
use crate::tensor::{Graph, Matrix, Var};

use super::ValueNetwork;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub channels: usize,
    pub d: usize,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub w3: Matrix,
    pub b3: Matrix,
}

impl Mlp {
    pub fn random<R: Rng>(channels: usize, d: usize, hidden: usize, rng: &mut R) -> Self {
        let mut u = |r: usize, c: usize| {
            let s = 1.0 / (r as f64).sqrt();
            Matrix::from_fn(r, c, |_, _| rng.gen_range(-s..=s))
        };
        let input = channels * d;
        Self {
            channels,
            d,
            w1: u(input, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: u(hidden, hidden),
            b2: Matrix::zeros(1, hidden),
            w3: u(hidden, 1),
            b3: Matrix::zeros(1, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }
}

impl ValueNetwork for Mlp {
    fn blocks(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.w3, &mut self.b3]
    }

    fn build(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        if g.value(x).shape() != (self.channels, self.d) {
            return Err(dim("mlp", format!("input {:?}, expected {}x{}", g.value(x).shape(), self.channels, self.d)));
        }
        let flat = g.reshape(x, 1, self.channels * self.d)?;
        let mut h = flat;
        for (w, b) in [(vars[0], vars[1]), (vars[2], vars[3])] {
            let pre = g.matmul(h, w)?;
            let pre = g.add_row(pre, b)?;
            h = g.relu(pre);
        }
        let out = g.matmul(h, vars[4])?;
        g.add(out, vars[5])
    }

    fn input_dim(&self) -> usize {
        self.d
    }
}

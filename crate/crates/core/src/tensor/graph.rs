//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation as a node; [`Graph::backward`]
//! walks the tape in reverse from a 1×1 output. Leaves are either
//! parameters (gradients wanted) or constants (gradient flow pruned).

use crate::error::{dim, Error, Result};

use super::matrix::{check_p, dot, lp_norm, softmax_in_place, Matrix, PROJECTION_SLACK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Softmax(usize),
    LogSoftmax(usize),
    Relu(usize),
    Project(usize, f64),
    Clip(usize, f64),
    Sum(usize),
    GroupSum(usize, usize),
    SliceCols(usize, usize),
    Reshape(usize),
    Square(usize),
    AddN(Vec<usize>),
    Transpose(usize),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient with respect to `v`; zero when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from gradient propagation.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// The scalar held by a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, value: Matrix, op: Op) -> Var {
        let ng = self.nodes[x.0].needs_grad;
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Matrix, op: Op) -> Var {
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMul(a.0, b.0)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMulT(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.binary(a, b, v, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.binary(a, b, v, Op::Sub(a.0, b.0)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.binary(a, b, v, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).scale(c);
        self.unary(x, v, Op::Scale(x.0, c))
    }

    /// Adds the 1×c row `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let v = self.value(x).add_row_broadcast(self.value(row))?;
        Ok(self.binary(x, row, v, Op::AddRow(x.0, row.0)))
    }

    /// Multiplies every row of `x` elementwise by the 1×c row `row`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let v = self.value(x).mul_row_broadcast(self.value(row))?;
        Ok(self.binary(x, row, v, Op::MulRow(x.0, row.0)))
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let v = self.value(x).row_softmax();
        self.unary(x, v, Op::Softmax(x.0))
    }

    pub fn row_log_softmax(&mut self, x: Var) -> Var {
        let v = self.value(x).row_log_softmax();
        self.unary(x, v, Op::LogSoftmax(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).relu();
        self.unary(x, v, Op::Relu(x.0))
    }

    pub fn row_project_lp(&mut self, x: Var, p: f64) -> Result<Var> {
        let v = self.value(x).row_project_lp(p)?;
        Ok(self.unary(x, v, Op::Project(x.0, p)))
    }

    /// Entrywise clamp to `[-v, v]`.
    pub fn clip(&mut self, x: Var, v: f64) -> Result<Var> {
        if v.is_nan() || v <= 0.0 {
            return Err(Error::Domain(format!("clip level {v} must be positive")));
        }
        let out = self.value(x).map(|e| e.clamp(-v, v));
        Ok(self.unary(x, out, Op::Clip(x.0, v)))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Matrix::scalar(self.value(x).sum());
        self.unary(x, v, Op::Sum(x.0))
    }

    pub fn group_sum_cols(&mut self, x: Var, group: usize) -> Result<Var> {
        let v = self.value(x).group_sum_cols(group)?;
        Ok(self.unary(x, v, Op::GroupSum(x.0, group)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).slice_cols(start, len)?;
        Ok(self.unary(x, v, Op::SliceCols(x.0, start)))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(x).reshape(rows, cols)?;
        Ok(self.unary(x, v, Op::Reshape(x.0)))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e * e);
        self.unary(x, v, Op::Square(x.0))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        self.unary(x, v, Op::Transpose(x.0))
    }

    /// Sum of equally shaped nodes.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Contract("add_n of nothing".into()))?;
        let mut v = self.value(*first).clone();
        for x in &xs[1..] {
            let other = self.value(*x);
            if other.shape() != v.shape() {
                return Err(dim("add_n", format!("{:?} vs {:?}", v.shape(), other.shape())));
            }
            v.add_assign(other);
        }
        let ng = xs.iter().any(|x| self.nodes[x.0].needs_grad);
        Ok(self.push(v, Op::AddN(xs.iter().map(|x| x.0).collect()), ng))
    }

    /// Reverse pass from a 1×1 output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got {:?}",
                out.shape()
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::scalar(1.0));
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !g.is_finite() || !node.value.is_finite() {
                return Err(Error::Divergence(format!("non-finite value or gradient at tape node {i}")));
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        // Only leaf gradients are meaningful to callers.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn val(&self, i: usize) -> &Matrix {
        &self.nodes[i].value
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let acc = |grads: &mut [Option<Matrix>], j: usize, d: Matrix| match &mut grads[j] {
            Some(existing) => existing.add_assign(&d),
            slot => *slot = Some(d),
        };
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.wants(a) {
                    acc(grads, a, g.matmul_t(self.val(b)).expect("shape"));
                }
                if self.wants(b) {
                    acc(grads, b, self.val(a).t_matmul(g).expect("shape"));
                }
            }
            &Op::MatMulT(a, b) => {
                if self.wants(a) {
                    acc(grads, a, g.matmul(self.val(b)).expect("shape"));
                }
                if self.wants(b) {
                    acc(grads, b, g.t_matmul(self.val(a)).expect("shape"));
                }
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    acc(grads, a, g.clone());
                }
                if self.wants(b) {
                    acc(grads, b, g.clone());
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    acc(grads, a, g.clone());
                }
                if self.wants(b) {
                    acc(grads, b, g.scale(-1.0));
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    acc(grads, a, g.hadamard(self.val(b)).expect("shape"));
                }
                if self.wants(b) {
                    acc(grads, b, g.hadamard(self.val(a)).expect("shape"));
                }
            }
            &Op::Scale(x, c) => acc(grads, x, g.scale(c)),
            &Op::AddRow(x, row) => {
                if self.wants(x) {
                    acc(grads, x, g.clone());
                }
                if self.wants(row) {
                    acc(grads, row, g.column_sums());
                }
            }
            &Op::MulRow(x, row) => {
                if self.wants(x) {
                    acc(grads, x, g.mul_row_broadcast(self.val(row)).expect("shape"));
                }
                if self.wants(row) {
                    acc(grads, row, g.hadamard(self.val(x)).expect("shape").column_sums());
                }
            }
            &Op::Softmax(x) => {
                let y = &node.value;
                let mut d = g.clone();
                for r in 0..y.rows() {
                    let inner = dot(g.row(r), y.row(r));
                    for (dv, yv) in d.row_mut(r).iter_mut().zip(y.row(r)) {
                        *dv = yv * (*dv - inner);
                    }
                }
                acc(grads, x, d);
            }
            &Op::LogSoftmax(x) => {
                let mut d = g.clone();
                for r in 0..d.rows() {
                    let mut probs = self.val(x).row(r).to_vec();
                    softmax_in_place(&mut probs);
                    let total: f64 = g.row(r).iter().sum();
                    for (dv, pv) in d.row_mut(r).iter_mut().zip(&probs) {
                        *dv -= pv * total;
                    }
                }
                acc(grads, x, d);
            }
            &Op::Relu(x) => {
                let xv = self.val(x);
                let d = Matrix::new(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(xv.data()).map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 }).collect(),
                )
                .expect("shape");
                acc(grads, x, d);
            }
            &Op::Project(x, p) => acc(grads, x, project_backward(self.val(x), g, p)),
            &Op::Clip(x, v) => {
                let xv = self.val(x);
                let d = Matrix::new(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(xv.data()).map(|(&gv, &e)| if e.abs() <= v { gv } else { 0.0 }).collect(),
                )
                .expect("shape");
                acc(grads, x, d);
            }
            &Op::Sum(x) => {
                let (r, c) = self.val(x).shape();
                acc(grads, x, Matrix::filled(r, c, g.item()));
            }
            &Op::GroupSum(x, group) => {
                let (r, c) = self.val(x).shape();
                acc(grads, x, Matrix::from_fn(r, c, |i, j| g.get(i, j / group)));
            }
            &Op::SliceCols(x, start) => {
                let (r, c) = self.val(x).shape();
                let len = g.cols();
                acc(
                    grads,
                    x,
                    Matrix::from_fn(r, c, |i, j| if j >= start && j < start + len { g.get(i, j - start) } else { 0.0 }),
                );
            }
            &Op::Reshape(x) => {
                let (r, c) = self.val(x).shape();
                acc(grads, x, g.reshape(r, c).expect("shape"));
            }
            &Op::Square(x) => {
                acc(grads, x, g.hadamard(&self.val(x).scale(2.0)).expect("shape"));
            }
            &Op::Transpose(x) => acc(grads, x, g.transpose()),
            Op::AddN(xs) => {
                for &x in xs {
                    if self.wants(x) {
                        acc(grads, x, g.clone());
                    }
                }
            }
        }
    }
}

fn project_backward(x: &Matrix, g: &Matrix, p: f64) -> Matrix {
    debug_assert!(check_p(p).is_ok());
    let mut d = g.clone();
    for r in 0..x.rows() {
        let row = x.row(r);
        let n = lp_norm(row, p);
        if n <= 1.0 + PROJECTION_SLACK {
            continue;
        }
        let gy = dot(g.row(r), row);
        // ∂‖x‖_p/∂x_i for the three cases that have cheap closed forms.
        let dn: Vec<f64> = if p.is_infinite() {
            let arg = row
                .iter()
                .enumerate()
                .fold(0, |best, (i, v)| if v.abs() > row[best].abs() { i } else { best });
            (0..row.len()).map(|i| if i == arg { row[i].signum() } else { 0.0 }).collect()
        } else if p == 1.0 {
            row.iter().map(|v| if *v == 0.0 { 0.0 } else { v.signum() }).collect()
        } else {
            row.iter().map(|v| v.signum() * (v.abs() / n).powf(p - 1.0)).collect()
        };
        for ((dv, gv), dnv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(&dn) {
            *dv = gv / n - gy / (n * n) * dnv;
        }
    }
    d
}

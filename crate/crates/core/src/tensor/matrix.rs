use std::fmt;

use crate::error::{dim, Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Both dimensions are always positive.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

/// ℓ_p norm of a slice; `p = f64::INFINITY` gives the max-abs norm.
pub fn lp_norm(v: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    } else if p == 1.0 {
        v.iter().map(|x| x.abs()).sum()
    } else if p == 2.0 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else {
        v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(dim("Matrix::new", format!("empty shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(dim(
                "Matrix::new",
                format!("{} values for shape {rows}x{cols}", data.len()),
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim("Matrix::from_rows", "ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Self::new(1, v.len(), v.to_vec()).expect("non-empty finite row")
    }

    pub fn col_vector(v: &[f64]) -> Self {
        Self::new(v.len(), 1, v.to_vec()).expect("non-empty finite column")
    }

    pub fn scalar(x: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![x] }
    }

    /// Builds a matrix entrywise from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// The scalar held by a 1×1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.len() {
            return Err(dim("reshape", format!("{:?} -> {rows}x{cols}", self.shape())));
        }
        Ok(Self { rows, cols, data: self.data.clone() })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(dim("matmul", format!("{:?} x {:?}", self.shape(), other.shape())));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for l in 0..k {
                let a = self.data[i * k + l];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[l * m..(l + 1) * m];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { rows: n, cols: m, data: out })
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(dim("matmul_t", format!("{:?} x {:?}ᵀ", self.shape(), other.shape())));
        }
        let (n, m) = (self.rows, other.rows);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                out[i * m + j] = dot(a, other.row(j));
            }
        }
        Ok(Self { rows: n, cols: m, data: out })
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(dim("t_matmul", format!("{:?}ᵀ x {:?}", self.shape(), other.shape())));
        }
        let (n, m) = (self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for l in 0..self.rows {
            let a_row = self.row(l);
            let b_row = other.row(l);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * m..(i + 1) * m];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { rows: n, cols: m, data: out })
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(dim(op, format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Matrix) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for x in &mut self.data {
            *x *= c;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum over rows, giving a 1×cols row vector.
    pub fn column_sums(&self) -> Self {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, x) in out.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
        Self { rows: 1, cols: self.cols, data: out }
    }

    pub fn frobenius_norm(&self) -> f64 {
        lp_norm(&self.data, 2.0)
    }

    pub fn max_abs(&self) -> f64 {
        lp_norm(&self.data, f64::INFINITY)
    }

    /// Adds a 1×cols row vector to every row.
    pub fn add_row_broadcast(&self, row: &Matrix) -> Result<Self> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(dim("add_row_broadcast", format!("{:?} + {:?}", self.shape(), row.shape())));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Multiplies every row elementwise by a 1×cols row vector.
    pub fn mul_row_broadcast(&self, row: &Matrix) -> Result<Self> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(dim("mul_row_broadcast", format!("{:?} * {:?}", self.shape(), row.shape())));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&row.data) {
                *o *= b;
            }
        }
        Ok(out)
    }

    /// Sums consecutive groups of `group` columns: N×(k·group) → N×k.
    pub fn group_sum_cols(&self, group: usize) -> Result<Self> {
        if group == 0 || self.cols % group != 0 {
            return Err(dim("group_sum_cols", format!("{} columns in groups of {group}", self.cols)));
        }
        let k = self.cols / group;
        Ok(Self::from_fn(self.rows, k, |r, c| self.row(r)[c * group..(c + 1) * group].iter().sum()))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.cols {
            return Err(dim("slice_cols", format!("[{start}, {}) of {} columns", start + len, self.cols)));
        }
        Ok(Self::from_fn(self.rows, len, |r, c| self.get(r, start + c)))
    }

    pub fn hcat(&self, other: &Matrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(dim("hcat", format!("{:?} | {:?}", self.shape(), other.shape())));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Self { rows: self.rows, cols, data })
    }

    pub fn vcat(parts: &[Matrix]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if parts.iter().any(|m| m.cols != cols) {
            return Err(dim("vcat", "column counts differ"));
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        Self::new(rows, cols, parts.iter().flat_map(|m| m.data.iter().copied()).collect())
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.rows, "permutation length");
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn relu(&self) -> Self {
        self.map(|x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn row_softmax(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows {
            softmax_in_place(out.row_mut(r));
        }
        out
    }

    pub fn row_log_softmax(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = out.row_mut(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        out
    }

    /// Radially scales each row into the unit ℓ_p ball: `row / max(1, ‖row‖_p)`.
    pub fn row_project_lp(&self, p: f64) -> Result<Self> {
        check_p(p)?;
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = out.row_mut(r);
            let n = lp_norm(row, p);
            if n > 1.0 + PROJECTION_SLACK {
                for x in row.iter_mut() {
                    *x /= n;
                }
            }
        }
        Ok(out)
    }

    /// max over rows of the row ℓ_p norm, i.e. ‖Xᵀ‖_{p,∞}.
    pub fn max_row_norm(&self, p: f64) -> f64 {
        (0..self.rows).fold(0.0, |m, r| m.max(lp_norm(self.row(r), p)))
    }

    /// ‖Wᵀ‖_{p,q}: the q-norm of the vector of row ℓ_p norms.
    pub fn transposed_pq_norm(&self, p: f64, q: f64) -> f64 {
        let rn: Vec<f64> = (0..self.rows).map(|r| lp_norm(self.row(r), p)).collect();
        lp_norm(&rn, q)
    }
}

/// Rows whose norm exceeds one by less than this are treated as inside the
/// ball, which keeps the projection exactly idempotent under rounding.
pub(crate) const PROJECTION_SLACK: f64 = 1e-12;

pub(crate) fn check_p(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::Domain(format!("norm order p = {p} must be at least 1")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub fn clip_scalar(x: f64, v: f64) -> f64 {
    x.clamp(-v, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for l in 0..a.cols() {
                    s += a.get(i, l) * b.get(l, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn pseudo_random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut state = seed;
        Matrix::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn identity_times_matrix_is_matrix() {
        let m = pseudo_random(3, 4, 1);
        assert_eq!(Matrix::identity(3).matmul(&m).unwrap(), m);
    }

    #[test]
    fn times_zero_column_is_zero() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let z = Matrix::zeros(2, 1);
        assert_eq!(a.matmul(&z).unwrap(), z);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = pseudo_random(4, 5, 2);
        let b = pseudo_random(5, 2, 3);
        let got = a.matmul(&b).unwrap();
        let want = naive_matmul(&a, &b);
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
        let bt = b.transpose();
        let got_t = a.matmul_t(&bt).unwrap();
        let got_tm = a.transpose().t_matmul(&b).unwrap();
        for ((x, y), z) in got_t.data().iter().zip(want.data()).zip(got_tm.data()) {
            assert!((x - y).abs() <= 1e-12 && (z - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let err = Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[&[0.0, 0.0]]).unwrap().row_softmax();
        assert_eq!(m.data(), &[0.5, 0.5]);
        let m = Matrix::from_rows(&[&[1000.0, 1000.0, 1000.0]]).unwrap().row_softmax();
        for x in m.data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let m = Matrix::from_rows(&[&[0.0, 3f64.ln()]]).unwrap().row_softmax();
        assert!((m.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((m.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn relu_examples() {
        let m = Matrix::row_vector(&[-1.0, 0.0, 2.0]).relu();
        assert_eq!(m.data(), &[0.0, 0.0, 2.0]);
        let neg = Matrix::filled(2, 3, -0.5).relu();
        assert_eq!(neg, Matrix::zeros(2, 3));
    }

    #[test]
    fn projection_examples() {
        let inside = Matrix::row_vector(&[0.3, 0.4]);
        assert_eq!(inside.row_project_lp(2.0).unwrap(), inside);
        let m = Matrix::row_vector(&[3.0, 4.0]).row_project_lp(2.0).unwrap();
        assert!((m.get(0, 0) - 0.6).abs() < 1e-15 && (m.get(0, 1) - 0.8).abs() < 1e-15);
        let m = Matrix::row_vector(&[2.0, 0.0]).row_project_lp(1.0).unwrap();
        assert_eq!(m.data(), &[1.0, 0.0]);
        assert!(matches!(inside.row_project_lp(0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_scalar(0.5, 1.0), 0.5);
        assert_eq!(clip_scalar(2.0, 1.0), 1.0);
        assert_eq!(clip_scalar(-3.0, 1.0), -1.0);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(0, 2, vec![]).is_err());
        assert!(Matrix::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn pq_norm_of_rows() {
        let w = Matrix::from_rows(&[&[3.0, 4.0], &[0.0, 0.0], &[6.0, 8.0]]).unwrap();
        assert!((w.transposed_pq_norm(2.0, 2.0) - (25.0f64 + 100.0).sqrt()).abs() < 1e-12);
        assert_eq!(w.transposed_pq_norm(2.0, f64::INFINITY), 10.0);
        assert_eq!(w.max_row_norm(1.0), 14.0);
    }
}

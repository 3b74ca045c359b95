use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm ceilings on every parameter block of a set transformer, together
/// with the conjugate exponents `(p, q)` they are measured in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormBudget {
    /// Bound on each rFF output weight `|a_kj|`.
    pub ff_out: f64,
    /// Bound on each rFF input column `‖b_kj‖_q`.
    pub ff_in: f64,
    /// Bound on `‖W_QKᵀ‖_{p,q}`.
    pub qk: f64,
    /// Bound on `‖W_Vᵀ‖_{p,q}`.
    pub value: f64,
    /// Bound on the readout `‖w‖_q`.
    pub readout: f64,
    pub p: f64,
    pub q: f64,
}

/// The exponent `q` with `1/p + 1/q = 1`.
pub fn conjugate_exponent(p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::Domain(format!("norm order p = {p} must be at least 1")));
    }
    Ok(if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    })
}

fn inv(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        1.0 / x
    }
}

pub(crate) fn check_conjugate(p: f64, q: f64) -> Result<()> {
    if p.is_nan() || q.is_nan() || p < 1.0 || q < 1.0 || (inv(p) + inv(q) - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("({p}, {q}) is not a conjugate exponent pair")));
    }
    Ok(())
}

/// The norm-comparison constant: 1 when `p ≤ q`, otherwise `d^{1/q − 1/p}`.
pub fn conjugate_constant(p: f64, q: f64, d: usize) -> Result<f64> {
    check_conjugate(p, q)?;
    if p <= q {
        Ok(1.0)
    } else {
        Ok((d as f64).powf(inv(q) - inv(p)))
    }
}

impl NormBudget {
    pub fn new(ff_out: f64, ff_in: f64, qk: f64, value: f64, readout: f64, p: f64) -> Result<Self> {
        let q = conjugate_exponent(p)?;
        let b = Self { ff_out, ff_in, qk, value, readout, p, q };
        b.validate()?;
        Ok(b)
    }

    /// Every ceiling set to `c`, measured in the Euclidean pair `p = q = 2`.
    pub fn uniform(c: f64) -> Result<Self> {
        Self::new(c, c, c, c, c, 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        check_conjugate(self.p, self.q)?;
        for (name, v) in [
            ("ff_out", self.ff_out),
            ("ff_in", self.ff_in),
            ("qk", self.qk),
            ("value", self.value),
            ("readout", self.readout),
        ] {
            if !(v > 1.0) || !v.is_finite() {
                return Err(Error::Domain(format!("budget {name} = {v} must be finite and exceed 1")));
            }
        }
        Ok(())
    }

    /// Product of the four layer ceilings that appears inside the covering logs.
    pub fn layer_product(&self) -> f64 {
        self.value * self.qk * self.ff_out * self.ff_in
    }
}

impl Default for NormBudget {
    fn default() -> Self {
        Self { ff_out: 2.0, ff_in: 2.0, qk: 2.0, value: 2.0, readout: 2.0, p: 2.0, q: 2.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_examples() {
        assert_eq!(conjugate_constant(2.0, 2.0, 7).unwrap(), 1.0);
        assert_eq!(conjugate_constant(f64::INFINITY, 1.0, 4).unwrap(), 4.0);
        assert!((conjugate_constant(4.0, 4.0 / 3.0, 16).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(conjugate_constant(1.0, f64::INFINITY, 9).unwrap(), 1.0);
    }

    #[test]
    fn non_conjugate_pair_is_domain_error() {
        assert!(matches!(conjugate_constant(2.0, 3.0, 4), Err(Error::Domain(_))));
    }

    #[test]
    fn budgets_must_exceed_one() {
        assert!(NormBudget::new(1.0, 2.0, 2.0, 2.0, 2.0, 2.0).is_err());
        assert!(NormBudget::new(2.0, 2.0, 2.0, 2.0, 2.0, 0.5).is_err());
        let b = NormBudget::new(2.0, 2.0, 2.0, 2.0, 2.0, 3.0).unwrap();
        assert!((b.q - 1.5).abs() < 1e-15);
    }
}

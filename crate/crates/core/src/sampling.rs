//! Closed-form rank predictions and sampling-rate thresholds.
//!
//! The thresholds compare observed entries with the degrees of freedom of a
//! rank-`r` factorization, either of the data matrix itself (low-rank
//! completion) or of its polynomial feature-space image (kernel completion).

use serde::{Deserialize, Serialize};

use crate::error::{KfmcError, Result};

/// Data generated by `u` polynomial maps of order `p` from a `d`-dimensional latent
/// space into `R^m`, `n` columns, completed with a kernel of order `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemShape {
    pub m: u64,
    pub n: u64,
    pub d: u64,
    pub p: u64,
    pub q: u64,
    pub u: u64,
}

impl ProblemShape {
    pub fn new(m: u64, n: u64, d: u64, p: u64, q: u64, u: u64) -> Result<Self> {
        let shape = ProblemShape { m, n, d, p, q, u };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.m, self.n, self.d, self.p, self.q, self.u].contains(&0) {
            return Err(KfmcError::arg("m, n, d, p, q and u must all be >= 1"));
        }
        Ok(())
    }

    /// Dimension of the order-`q` feature space of `R^m`.
    pub fn feature_dim(&self) -> Result<u128> {
        binomial(self.m + self.q, self.q)
    }

    /// Rank of the feature-space image of all `u` maps before truncation by shape.
    pub fn feature_rank(&self) -> Result<u128> {
        let pq = self
            .p
            .checked_mul(self.q)
            .ok_or_else(|| overflow("p * q"))?;
        binomial(self.d + pq, pq)?
            .checked_mul(self.u as u128)
            .ok_or_else(|| overflow("u * C(d + pq, pq)"))
    }
}

fn overflow(what: &str) -> KfmcError {
    KfmcError::Overflow(format!("{what} does not fit in 128 bits"))
}

/// Exact `C(n, k)`, or an overflow error.
pub fn binomial(n: u64, k: u64) -> Result<u128> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k) as u128;
    let n = n as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc
            .checked_mul(n - i)
            .ok_or_else(|| overflow(&format!("C({n}, {k})")))?
            / (i + 1);
    }
    Ok(acc)
}

/// `min{m, n, u * C(d + p, p)}`.
pub fn expected_rank_x(shape: &ProblemShape) -> Result<u128> {
    shape.validate()?;
    let per_map = binomial(shape.d + shape.p, shape.p)?;
    let total = per_map
        .checked_mul(shape.u as u128)
        .ok_or_else(|| overflow("u * C(d + p, p)"))?;
    Ok(total.min(shape.m as u128).min(shape.n as u128))
}

/// `min{C(m + q, q), n, u * C(d + pq, pq)}`.
pub fn expected_rank_phi(shape: &ProblemShape) -> Result<u128> {
    shape.validate()?;
    Ok(shape
        .feature_dim()?
        .min(shape.n as u128)
        .min(shape.feature_rank()?))
}

/// `C(rate * m + q, q)` for real `rate * m`, by the product formula.
pub fn dof_observed_per_column(rate: f64, m: u64, q: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(KfmcError::arg(format!(
            "sampling rate must be in [0, 1], got {rate}"
        )));
    }
    let base = rate * m as f64;
    Ok((1..=q).map(|i| (base + i as f64) / i as f64).product())
}

/// A sampling-rate threshold, clamped to 1 and as computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub value: f64,
    pub unclamped: f64,
    /// The threshold exceeds 1: no sampling rate meets it.
    pub vacuous: bool,
}

impl RateBound {
    fn from_raw(raw: f64) -> Self {
        RateBound {
            value: raw.min(1.0),
            unclamped: raw,
            vacuous: raw >= 1.0,
        }
    }
}

/// `(r/n + r/M - r^2/(n M))^(1/q)` with `r = u C(d + pq, pq)` and `M = C(m + q, q)`.
pub fn rho_kfmc(shape: &ProblemShape) -> Result<RateBound> {
    shape.validate()?;
    let r = shape.feature_rank()? as f64;
    let big_m = shape.feature_dim()? as f64;
    let n = shape.n as f64;
    let base = r / n + r / big_m - r * r / (n * big_m);
    Ok(RateBound::from_raw(
        base.max(0.0).powf(1.0 / shape.q as f64),
    ))
}

/// `((m + n) r_X - r_X^2) / (m n)` with `r_X` from [`expected_rank_x`].
pub fn rho_lrmc(shape: &ProblemShape) -> Result<RateBound> {
    let r = expected_rank_x(shape)? as f64;
    let (m, n) = (shape.m as f64, shape.n as f64);
    Ok(RateBound::from_raw(((m + n) * r - r * r) / (m * n)))
}

/// `sqrt(c^(q+1) / (q+1)!)`: error scale of the order-`q` Taylor truncation of an RBF kernel.
pub fn rbf_poly_truncation_error(c_bound: f64, q: u32) -> Result<f64> {
    if !(c_bound > 0.0 && c_bound < 1.0) {
        return Err(KfmcError::arg(format!(
            "c_bound must be in (0, 1), got {c_bound}"
        )));
    }
    let fact: f64 = (1..=q as u64 + 1).map(|i| i as f64).product();
    Ok((c_bound.powi(q as i32 + 1) / fact).sqrt())
}

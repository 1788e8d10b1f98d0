//! Kernel functions and dense kernel-matrix assembly.
//!
//! Two kernels are supported:
//!
//! ```text
//! Polynomial: k(x, y) = (x'y + c)^q
//! Rbf:        k(x, y) = exp(-|x - y|^2 / sigma^2)
//! ```
//!
//! Matrices are column-major with one sample per column, so `kernel_matrix(A, B)`
//! has entry `(i, j) = k(A[:, i], B[:, j])`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KfmcError, Result};

/// Dense kernel matrix; rows index the left argument's columns.
pub type KernelMatrix = DMatrix<f64>;

// Below this many scalar operations the rayon fork/join overhead dominates.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Polynomial { c: f64, q: u32 },
    Rbf { sigma: f64 },
}

impl KernelSpec {
    pub fn polynomial(c: f64, q: u32) -> Result<Self> {
        let spec = KernelSpec::Polynomial { c, q };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rbf(sigma: f64) -> Result<Self> {
        let spec = KernelSpec::Rbf { sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Polynomial { c, q } => {
                if q < 1 {
                    return Err(KfmcError::arg("polynomial order q must be >= 1"));
                }
                if !(c >= 0.0) || !c.is_finite() {
                    return Err(KfmcError::arg(format!(
                        "polynomial offset c must be finite and >= 0, got {c}"
                    )));
                }
            }
            KernelSpec::Rbf { sigma } => {
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(KfmcError::arg(format!(
                        "rbf bandwidth must be finite and > 0, got {sigma}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_rbf(&self) -> bool {
        matches!(self, KernelSpec::Rbf { .. })
    }

    /// Short name used in reports and checkpoints.
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Polynomial { .. } => "poly",
            KernelSpec::Rbf { .. } => "rbf",
        }
    }

    /// `k(x, y)`; errors on length mismatch.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(KfmcError::arg(format!(
                "kernel arguments differ in length: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Polynomial { c, q } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                (dot + c).powi(q as i32)
            }
            KernelSpec::Rbf { sigma } => {
                let dist2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-dist2 / (sigma * sigma)).exp()
            }
        }
    }

    /// Kernel matrix between the columns of `a` (m x p) and `b` (m x s).
    pub fn kernel_matrix(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<KernelMatrix> {
        if a.nrows() != b.nrows() {
            return Err(KfmcError::arg(format!(
                "kernel_matrix row mismatch: {} vs {}",
                a.nrows(),
                b.nrows()
            )));
        }
        Ok(self.kernel_matrix_unchecked(a, b))
    }

    pub(crate) fn kernel_matrix_unchecked(
        &self,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
    ) -> KernelMatrix {
        let (p, s) = (a.ncols(), b.ncols());
        let mut out = DMatrix::<f64>::zeros(p, s);
        let fill_col = |j: usize, col: &mut [f64]| {
            let bj = b.column(j);
            let bj = bj.as_slice();
            for (i, v) in col.iter_mut().enumerate() {
                *v = self.eval_unchecked(a.column(i).as_slice(), bj);
            }
        };
        if p * s * a.nrows().max(1) >= PAR_THRESHOLD && p > 0 {
            out.as_mut_slice()
                .par_chunks_mut(p)
                .enumerate()
                .for_each(|(j, col)| fill_col(j, col));
        } else if p > 0 {
            out.as_mut_slice()
                .chunks_mut(p)
                .enumerate()
                .for_each(|(j, col)| fill_col(j, col));
        }
        out
    }

    /// Kernel matrix of `a` with itself. Entry (i, j) and (j, i) evaluate the same
    /// commutative expression, so the result is exactly symmetric.
    pub(crate) fn gram(&self, a: &DMatrix<f64>) -> KernelMatrix {
        self.kernel_matrix_unchecked(a, a)
    }

    /// Elementwise `(G + c)^(q-1)`; polynomial kernels only.
    pub fn power_weights(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match *self {
            KernelSpec::Polynomial { c, q } => {
                let e = q as i32 - 1;
                Ok(g.map(|v| (v + c).powi(e)))
            }
            KernelSpec::Rbf { .. } => {
                Err(KfmcError::arg("power_weights requires a polynomial kernel"))
            }
        }
    }

    /// Derivative scale of the RBF exponent: d/dy k(x, y) = rbf_rate * (x - y) * k(x, y).
    pub(crate) fn rbf_rate(&self) -> f64 {
        match *self {
            KernelSpec::Rbf { sigma } => 2.0 / (sigma * sigma),
            KernelSpec::Polynomial { .. } => 0.0,
        }
    }
}

/// Mean Euclidean distance between distinct columns of `x`, the usual scale for
/// the RBF bandwidth. Uses every pair when there are at most `max_pairs`,
/// otherwise `max_pairs` pairs drawn with `seed`.
pub fn mean_pair_distance(x: &DMatrix<f64>, max_pairs: usize, seed: u64) -> Result<f64> {
    let n = x.ncols();
    if n < 2 || max_pairs == 0 {
        return Err(KfmcError::arg("need at least two columns and one pair"));
    }
    let dist = |i: usize, j: usize| (x.column(i) - x.column(j)).norm();
    let all = n * (n - 1) / 2;
    let mean = if all <= max_pairs {
        let total: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| dist(i, j))
            .sum();
        total / all as f64
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        for _ in 0..max_pairs {
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            total += dist(i, j);
        }
        total / max_pairs as f64
    };
    if !mean.is_finite() {
        return Err(KfmcError::num("pairwise distances are not finite"));
    }
    Ok(mean)
}

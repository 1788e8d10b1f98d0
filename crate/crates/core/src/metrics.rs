//! Recovery metrics and numerical rank.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{KfmcError, Result};
use crate::masked::Mask;

/// Default relative singular-value threshold for [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// `|X_hat - X|_F / |X|_F`.
pub fn relative_error(x_hat: &DMatrix<f64>, x_true: &DMatrix<f64>) -> Result<f64> {
    if x_hat.shape() != x_true.shape() {
        return Err(KfmcError::arg(format!(
            "shape mismatch: {:?} vs {:?}",
            x_hat.shape(),
            x_true.shape()
        )));
    }
    let denom = x_true.norm();
    if denom == 0.0 {
        return Err(KfmcError::arg("reference matrix has zero norm"));
    }
    Ok((x_hat - x_true).norm() / denom)
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(x: &DMatrix<f64>, rel_tol: f64) -> usize {
    if x.is_empty() {
        return 0;
    }
    let sv = x.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorScope {
    MissingOnly,
    All,
}

/// Relative error restricted to the missing entries (or all entries).
pub fn masked_relative_error(
    x_hat: &DMatrix<f64>,
    x_true: &DMatrix<f64>,
    mask: &Mask,
    scope: ErrorScope,
) -> Result<f64> {
    if x_hat.shape() != x_true.shape()
        || mask.nrows() != x_true.nrows()
        || mask.ncols() != x_true.ncols()
    {
        return Err(KfmcError::arg(
            "shape mismatch between estimate, reference and mask",
        ));
    }
    if scope == ErrorScope::All {
        return relative_error(x_hat, x_true);
    }
    let (mut num, mut den, mut count) = (0.0, 0.0, 0usize);
    for j in 0..x_true.ncols() {
        for i in 0..x_true.nrows() {
            if !mask.is_observed(i, j) {
                let t = x_true[(i, j)];
                num += (x_hat[(i, j)] - t).powi(2);
                den += t * t;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(KfmcError::arg("no missing entries to evaluate"));
    }
    if den == 0.0 {
        return Err(KfmcError::arg("reference is zero on the missing entries"));
    }
    Ok((num / den).sqrt())
}

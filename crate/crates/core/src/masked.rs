//! Partially observed matrices: the observed-entry mask, initial imputation and
//! projection of a working completion back onto the observed values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KfmcError, Result};

/// Observed-entry set of an `m x n` matrix, stored as a column-major bitmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    m: usize,
    n: usize,
    observed: Vec<bool>,
}

impl Mask {
    pub fn full(m: usize, n: usize) -> Self {
        Mask {
            m,
            n,
            observed: vec![true; m * n],
        }
    }

    pub fn empty(m: usize, n: usize) -> Self {
        Mask {
            m,
            n,
            observed: vec![false; m * n],
        }
    }

    /// Builds a mask from `(row, col)` pairs. Out-of-range or duplicate pairs are rejected.
    pub fn from_pairs(m: usize, n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut mask = Mask::empty(m, n);
        for &(i, j) in pairs {
            if i >= m || j >= n {
                return Err(KfmcError::arg(format!(
                    "mask index ({i}, {j}) outside {m}x{n}"
                )));
            }
            let k = i + j * m;
            if mask.observed[k] {
                return Err(KfmcError::arg(format!("duplicate mask index ({i}, {j})")));
            }
            mask.observed[k] = true;
        }
        Ok(mask)
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn(m: usize, n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut observed = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                observed.push(f(i, j));
            }
        }
        Mask { m, n, observed }
    }

    /// Observed wherever the entry is finite.
    pub fn from_finite(values: &DMatrix<f64>) -> Self {
        Mask::from_fn(values.nrows(), values.ncols(), |i, j| {
            values[(i, j)].is_finite()
        })
    }

    pub fn nrows(&self) -> usize {
        self.m
    }

    pub fn ncols(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i + j * self.m]
    }

    pub fn set(&mut self, i: usize, j: usize, observed: bool) {
        self.observed[i + j * self.m] = observed;
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    pub fn missing_count(&self) -> usize {
        self.m * self.n - self.observed_count()
    }

    pub fn observed_fraction(&self) -> f64 {
        if self.m * self.n == 0 {
            return 0.0;
        }
        self.observed_count() as f64 / (self.m * self.n) as f64
    }

    pub fn column_observed_count(&self, j: usize) -> usize {
        self.observed[j * self.m..(j + 1) * self.m]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Observed and missing row indices of column `j`.
    pub fn column_split(&self, j: usize) -> (Vec<usize>, Vec<usize>) {
        let col = &self.observed[j * self.m..(j + 1) * self.m];
        let mut obs = Vec::new();
        let mut mis = Vec::new();
        for (i, &b) in col.iter().enumerate() {
            if b {
                obs.push(i);
            } else {
                mis.push(i);
            }
        }
        (obs, mis)
    }

    /// Observed pairs in column-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.observed_count());
        for j in 0..self.n {
            for i in 0..self.m {
                if self.is_observed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Restricts the mask to a contiguous block of columns.
    pub fn columns(&self, start: usize, count: usize) -> Mask {
        Mask {
            m: self.m,
            n: count,
            observed: self.observed[start * self.m..(start + count) * self.m].to_vec(),
        }
    }

    /// 0/1 matrix, 1 = observed.
    pub fn to_indicator(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.n, |i, j| {
            if self.is_observed(i, j) {
                1.0
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    #[default]
    RowMean,
    Zero,
}

/// One column of a masked matrix split into observed and missing rows.
#[derive(Debug, Clone)]
pub struct ColumnView {
    pub x: DVector<f64>,
    pub observed: Vec<usize>,
    pub missing: Vec<usize>,
}

/// Observed data `M`, its mask, and the working completion `X`.
///
/// Unobserved entries of `M` hold `NaN`; the mask is authoritative.
#[derive(Debug, Clone)]
pub struct MaskedMatrix {
    observed_values: DMatrix<f64>,
    mask: Mask,
    x: DMatrix<f64>,
}

impl MaskedMatrix {
    /// Initial completion of `values` under `mask` (`impute_init`).
    pub fn impute_init(values: &DMatrix<f64>, mask: &Mask, strategy: InitStrategy) -> Result<Self> {
        let (m, n) = values.shape();
        if mask.nrows() != m || mask.ncols() != n {
            return Err(KfmcError::arg(format!(
                "mask is {}x{} but data is {m}x{n}",
                mask.nrows(),
                mask.ncols()
            )));
        }
        let mut observed_values = DMatrix::from_element(m, n, f64::NAN);
        for j in 0..n {
            for i in 0..m {
                if mask.is_observed(i, j) {
                    let v = values[(i, j)];
                    if !v.is_finite() {
                        return Err(KfmcError::arg(format!(
                            "observed entry ({i}, {j}) is not finite"
                        )));
                    }
                    observed_values[(i, j)] = v;
                }
            }
        }
        let fill: Vec<f64> = match strategy {
            InitStrategy::Zero => vec![0.0; m],
            InitStrategy::RowMean => (0..m)
                .map(|i| {
                    let (sum, cnt) = (0..n)
                        .filter(|&j| mask.is_observed(i, j))
                        .fold((0.0, 0usize), |(s, c), j| (s + values[(i, j)], c + 1));
                    if cnt == 0 {
                        0.0
                    } else {
                        sum / cnt as f64
                    }
                })
                .collect(),
        };
        let x = DMatrix::from_fn(m, n, |i, j| {
            if mask.is_observed(i, j) {
                observed_values[(i, j)]
            } else {
                fill[i]
            }
        });
        Ok(MaskedMatrix {
            observed_values,
            mask: mask.clone(),
            x,
        })
    }

    /// Fully observed matrix; `X = M`.
    pub fn fully_observed(values: &DMatrix<f64>) -> Result<Self> {
        let (m, n) = values.shape();
        Self::impute_init(values, &Mask::full(m, n), InitStrategy::Zero)
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Observed values; `NaN` where unobserved.
    pub fn observed_values(&self) -> &DMatrix<f64> {
        &self.observed_values
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Mutable access to the working completion. Call `project_observed` afterwards.
    pub fn x_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.x
    }

    pub fn into_x(self) -> DMatrix<f64> {
        self.x
    }

    /// Resets observed entries of `X` to `M`. Idempotent.
    pub fn project_observed(&mut self) {
        let m = self.x.nrows();
        for (k, v) in self.x.as_mut_slice().iter_mut().enumerate() {
            if self.mask.is_observed(k % m, k / m) {
                *v = self.observed_values.as_slice()[k];
            }
        }
    }

    pub fn column_view(&self, j: usize) -> Result<ColumnView> {
        if j >= self.ncols() {
            return Err(KfmcError::arg(format!(
                "column {j} out of range (n = {})",
                self.ncols()
            )));
        }
        let (observed, missing) = self.mask.column_split(j);
        Ok(ColumnView {
            x: self.x.column(j).into_owned(),
            observed,
            missing,
        })
    }

    /// Largest deviation of `X` from `M` over observed entries.
    pub fn observed_residual(&self) -> f64 {
        self.mask
            .pairs()
            .into_iter()
            .map(|(i, j)| (self.x[(i, j)] - self.observed_values[(i, j)]).abs())
            .fold(0.0, f64::max)
    }
}

//! Synthetic data from polynomial maps of low-dimensional latent variables, and
//! missing-entry mask generators.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KfmcError, Result};
use crate::masked::Mask;

const MAX_REDRAWS: usize = 10_000;
const REJECTION_DRAWS: usize = 100;

/// Parameters of `x = P_k * features(s)`, `s ~ U(0, 1)^d`, for `u` maps `P_k ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Latent dimension.
    pub d: usize,
    /// Polynomial order of each map.
    pub p: usize,
    /// Number of maps (subspaces).
    pub u: usize,
    /// Ambient dimension.
    pub m: usize,
    /// Samples per map.
    pub n_per: usize,
    pub seed: u64,
    pub include_constant: bool,
}

impl SyntheticSpec {
    pub fn new(d: usize, p: usize, u: usize, m: usize, n_per: usize, seed: u64) -> Self {
        SyntheticSpec {
            d,
            p,
            u,
            m,
            n_per,
            seed,
            include_constant: false,
        }
    }

    /// One cubic map of a 3-dimensional latent variable into R^30, 100 samples.
    pub fn single_nonlinear(seed: u64) -> Self {
        Self::new(3, 3, 1, 30, 100, seed)
    }

    /// Three cubic maps, 100 samples each.
    pub fn union_nonlinear(seed: u64) -> Self {
        Self::new(3, 3, 3, 30, 100, seed)
    }

    /// Ten linear maps, 100 samples each.
    pub fn union_linear(seed: u64) -> Self {
        Self::new(3, 1, 10, 30, 100, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.p < 1 || self.u < 1 || self.m < 1 {
            return Err(KfmcError::arg("d, p, u and m must all be >= 1"));
        }
        Ok(())
    }

    pub fn ncols(&self) -> usize {
        self.u * self.n_per
    }

    /// Number of features per sample.
    pub fn feature_len(&self) -> usize {
        monomial_exponents(self.d, self.p, self.include_constant).len()
    }

    /// Generic rank of the generated matrix.
    pub fn expected_rank(&self) -> usize {
        self.m.min(self.ncols()).min(self.u * self.feature_len())
    }
}

/// Exponent vectors of all monomials in `d` variables of total degree `<= p`,
/// graded by degree and lexicographic (descending in the first variable) within a degree.
pub fn monomial_exponents(d: usize, p: usize, include_constant: bool) -> Vec<Vec<u32>> {
    fn fill(remaining: u32, vars: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if vars == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(remaining - e, vars - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    let start = if include_constant { 0 } else { 1 };
    for degree in start..=p as u32 {
        fill(degree, d, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

/// All monomials of `s` with total degree `<= p`, graded-lexicographic order.
pub fn poly_features(s: &[f64], p: usize, include_constant: bool) -> Vec<f64> {
    monomial_exponents(s.len(), p, include_constant)
        .iter()
        .map(|exps| s.iter().zip(exps).map(|(v, &e)| v.powi(e as i32)).product())
        .collect()
}

/// Generates the data matrix (columns grouped by map) and each column's map label.
pub fn generate(spec: &SyntheticSpec) -> Result<(DMatrix<f64>, Vec<usize>)> {
    spec.validate()?;
    let exps = monomial_exponents(spec.d, spec.p, spec.include_constant);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.ncols();
    let mut x = DMatrix::zeros(spec.m, n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..spec.u {
        let p_mat =
            DMatrix::<f64>::from_fn(spec.m, exps.len(), |_, _| StandardNormal.sample(&mut rng));
        for t in 0..spec.n_per {
            let s: Vec<f64> = (0..spec.d).map(|_| rng.random::<f64>()).collect();
            let feats = nalgebra::DVector::from_iterator(
                exps.len(),
                exps.iter().map(|e| {
                    s.iter()
                        .zip(e)
                        .map(|(v, &p)| v.powi(p as i32))
                        .product::<f64>()
                }),
            );
            x.set_column(k * spec.n_per + t, &(&p_mat * feats));
            labels.push(k);
        }
    }
    Ok((x, labels))
}

/// Columns `(s, s^2, s^3)` with `s ~ U(-1, 1)`.
pub fn twisted_cubic(n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n < 1 {
        return Err(KfmcError::arg("twisted cubic needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok(twisted_cubic_at(&s))
}

pub fn twisted_cubic_at(s: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(3, s.len(), |i, j| s[j].powi(i as i32 + 1))
}

fn has_empty_column(mask: &Mask) -> bool {
    (0..mask.ncols()).any(|j| mask.column_observed_count(j) == 0)
}

/// Uniformly random missing entries.
///
/// With `per_column_exact = Some(k)`, exactly `k` entries are removed from every
/// column. Otherwise exactly `floor(rate * m * n)` entries are removed, sampled
/// without replacement and re-drawn until every column keeps an observation.
pub fn random_mask(
    m: usize,
    n: usize,
    rate: f64,
    seed: u64,
    per_column_exact: Option<usize>,
) -> Result<Mask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let Some(k) = per_column_exact {
        if k >= m {
            return Err(KfmcError::arg(format!(
                "cannot remove {k} of {m} entries per column"
            )));
        }
        let mut mask = Mask::full(m, n);
        for j in 0..n {
            for i in index::sample(&mut rng, m, k) {
                mask.set(i, j, false);
            }
        }
        return Ok(mask);
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(KfmcError::arg(format!(
            "missing rate must be in [0, 1), got {rate}"
        )));
    }
    let total = m * n;
    let missing = (rate * total as f64).floor() as usize;
    if m == 0 || n == 0 || missing == 0 {
        return Ok(Mask::full(m, n));
    }
    if missing > (m - 1) * n {
        return Err(KfmcError::arg(
            "missing count leaves some column without observations",
        ));
    }
    for _ in 0..REJECTION_DRAWS {
        let mut mask = Mask::full(m, n);
        for k in index::sample(&mut rng, total, missing) {
            mask.set(k % m, k / m, false);
        }
        if !has_empty_column(&mask) {
            return Ok(mask);
        }
    }
    // Rejection is hopeless when columns are short and the rate is high: keep one
    // random entry per column and draw the missing set from the rest.
    let keep: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    let pool: Vec<usize> = (0..total).filter(|&k| keep[k / m] != k % m).collect();
    let mut mask = Mask::full(m, n);
    for k in index::sample(&mut rng, pool.len(), missing) {
        let e = pool[k];
        mask.set(e % m, e / m, false);
    }
    Ok(mask)
}

/// Per row, `n_seq` non-overlapping runs of `round(rate * n / n_seq)` missing entries.
///
/// Placements are uniform over all non-overlapping configurations.
pub fn continuous_mask(m: usize, n: usize, rate: f64, n_seq: usize, seed: u64) -> Result<Mask> {
    if n_seq < 1 || n_seq > n {
        return Err(KfmcError::arg(format!(
            "need 1 <= n_seq <= n, got n_seq = {n_seq}, n = {n}"
        )));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(KfmcError::arg(format!(
            "missing rate must be in [0, 1), got {rate}"
        )));
    }
    let run = (rate * n as f64 / n_seq as f64).round() as usize;
    if run * n_seq > n {
        return Err(KfmcError::arg(format!(
            "{n_seq} runs of length {run} exceed row length {n}"
        )));
    }
    if run == 0 {
        return Ok(Mask::full(m, n));
    }
    let free = n - run * n_seq;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REDRAWS {
        let mut mask = Mask::full(m, n);
        for i in 0..m {
            // Choosing n_seq distinct slots among free + n_seq places the runs with the
            // gaps between them uniformly distributed.
            let mut slots: Vec<usize> = index::sample(&mut rng, free + n_seq, n_seq).into_vec();
            slots.sort_unstable();
            for (k, a) in slots.into_iter().enumerate() {
                let start = a + k * (run - 1);
                for j in start..start + run {
                    mask.set(i, j, false);
                }
            }
        }
        if !has_empty_column(&mask) {
            return Ok(mask);
        }
    }
    Err(KfmcError::arg(
        "could not draw a mask with an observation in every column",
    ))
}

//! Low-rank comparators: alternating ridge least squares completion and the
//! projection-based out-of-sample extension.

use nalgebra::{DMatrix, DVector};

use crate::error::{KfmcError, Result};
use crate::linalg;
use crate::masked::MaskedMatrix;
use crate::metrics;

/// Output of [`lrf_complete`].
#[derive(Debug, Clone)]
pub struct LrfResult {
    /// `U V'` with observed entries restored.
    pub completed: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Objective after initialization and after every half-sweep.
    pub objective_trace: Vec<f64>,
}

/// `sum over observed (X_ij - U_i V_j')^2 + lambda (|U|^2 + |V|^2)`.
pub fn lrf_objective(mm: &MaskedMatrix, u: &DMatrix<f64>, v: &DMatrix<f64>, lambda: f64) -> f64 {
    let fit = u * v.transpose();
    let resid: f64 = mm
        .mask()
        .pairs()
        .iter()
        .map(|&(i, j)| (mm.x()[(i, j)] - fit[(i, j)]).powi(2))
        .sum();
    resid + lambda * (u.norm_squared() + v.norm_squared())
}

/// Ridge solve of one factor row against the observed entries listed in `obs`,
/// `(sum_k f_k f_k' + lambda I) row = sum_k y_k f_k`.
fn ridge_row(other: &DMatrix<f64>, obs: &[(usize, f64)], lambda: f64) -> DVector<f64> {
    let r = other.ncols();
    if obs.is_empty() {
        return DVector::zeros(r);
    }
    let mut gram = DMatrix::<f64>::identity(r, r) * lambda;
    let mut rhs = DVector::<f64>::zeros(r);
    for &(k, y) in obs {
        let f = other.row(k).transpose();
        gram.ger(1.0, &f, &f, 1.0);
        rhs.axpy(y, &f, 1.0);
    }
    match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        // rank-deficient with lambda = 0: minimum-norm least squares
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(r)),
    }
}

/// Completes `mm` with a rank-`rank` factorization fitted by alternating ridge
/// least squares on the observed entries. The start is the truncated SVD of the
/// current (imputed) values, so results are deterministic.
pub fn lrf_complete(
    mm: &MaskedMatrix,
    rank: usize,
    lambda: f64,
    iters: usize,
) -> Result<LrfResult> {
    let (m, n) = (mm.nrows(), mm.ncols());
    if rank < 1 || rank > m.min(n) {
        return Err(KfmcError::arg(format!(
            "rank must be in [1, {}], got {rank}",
            m.min(n)
        )));
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(KfmcError::arg(format!(
            "ridge must be finite and >= 0, got {lambda}"
        )));
    }
    linalg::check_finite(mm.x(), "input")?;
    let svd = mm.x().clone().svd(true, true);
    let (left, right) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let mut u = DMatrix::zeros(m, rank);
    let mut v = DMatrix::zeros(n, rank);
    // singular values come sorted in decreasing order
    for k in 0..rank.min(svd.singular_values.len()) {
        let s = svd.singular_values[k].sqrt();
        u.set_column(k, &(left.column(k) * s));
        v.set_column(k, &(right.row(k).transpose() * s));
    }

    let x = mm.x();
    let mask = mm.mask();
    let mut trace = vec![lrf_objective(mm, &u, &v, lambda)];
    for _ in 0..iters {
        for i in 0..m {
            let obs: Vec<(usize, f64)> = (0..n)
                .filter(|&j| mask.is_observed(i, j))
                .map(|j| (j, x[(i, j)]))
                .collect();
            u.set_row(i, &ridge_row(&v, &obs, lambda).transpose());
        }
        trace.push(lrf_objective(mm, &u, &v, lambda));
        for j in 0..n {
            let obs: Vec<(usize, f64)> = (0..m)
                .filter(|&i| mask.is_observed(i, j))
                .map(|i| (i, x[(i, j)]))
                .collect();
            v.set_row(j, &ridge_row(&u, &obs, lambda).transpose());
        }
        trace.push(lrf_objective(mm, &u, &v, lambda));
    }

    let mut completed = &u * v.transpose();
    for (i, j) in mask.pairs() {
        completed[(i, j)] = x[(i, j)];
    }
    linalg::check_finite(&completed, "low-rank completion")?;
    Ok(LrfResult {
        completed,
        u,
        v,
        objective_trace: trace,
    })
}

/// Leading left singular vectors of `x_train`. With `rank = None` the numerical rank is used.
pub fn svd_basis(x_train: &DMatrix<f64>, rank: Option<usize>) -> Result<DMatrix<f64>> {
    let r = rank.unwrap_or_else(|| metrics::numerical_rank(x_train, metrics::DEFAULT_RANK_TOL));
    if r < 1 || r > x_train.nrows().min(x_train.ncols()) {
        return Err(KfmcError::arg(format!("basis rank {r} out of range")));
    }
    let svd = x_train.clone().svd(true, false);
    Ok(svd.u.unwrap().columns(0, r).into_owned())
}

/// Fills the missing entries of `x` with `U_mis (U_obs' U_obs + lambda I)^-1 U_obs' x_obs`.
pub fn ose_lrf(
    basis: &DMatrix<f64>,
    x: &DVector<f64>,
    observed: &[bool],
    lambda: f64,
) -> Result<DVector<f64>> {
    let (m, r) = basis.shape();
    if x.len() != m || observed.len() != m {
        return Err(KfmcError::arg(format!(
            "sample length {} does not match basis rows {m}",
            x.len()
        )));
    }
    let obs: Vec<usize> = (0..m).filter(|&i| observed[i]).collect();
    if obs.is_empty() {
        return Err(KfmcError::arg("sample has no observed entries"));
    }
    let u_obs = basis.select_rows(obs.iter());
    let x_obs = DVector::from_iterator(obs.len(), obs.iter().map(|&i| x[i]));
    let gram = u_obs.transpose() * &u_obs + DMatrix::<f64>::identity(r, r) * lambda;
    let rhs = u_obs.transpose() * x_obs;
    let coef = gram
        .lu()
        .solve(&rhs)
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .ok_or_else(|| KfmcError::num("observed rows of the basis are rank deficient"))?;
    let mut out = x.clone();
    for i in (0..m).filter(|&i| !observed[i]) {
        out[i] = basis.row(i).dot(&coef.transpose());
    }
    Ok(out)
}

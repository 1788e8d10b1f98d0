//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{KfmcError, Result};

/// Relative ridge used to guard near-singular Hessian-like matrices.
pub const RIDGE_REL: f64 = 1e-8;

/// Returns `a + eps I` with `eps = RIDGE_REL * |trace(a)| / r`.
pub fn ridged(a: &DMatrix<f64>) -> DMatrix<f64> {
    let r = a.nrows().max(1);
    let eps = RIDGE_REL * a.trace().abs() / r as f64;
    let mut out = a.clone();
    for i in 0..a.nrows() {
        out[(i, i)] += eps;
    }
    out
}

/// Solves `a x = b` for symmetric positive-definite `a` via Cholesky.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(a.clone())
        .ok_or_else(|| KfmcError::num(format!("{what}: matrix is not positive definite")))?;
    let x = chol.solve(b);
    check_finite(&x, what)?;
    Ok(x)
}

/// Solves `a x = b` for symmetric `a`: Cholesky when positive definite, LU otherwise.
pub fn sym_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if let Some(chol) = nalgebra::Cholesky::new(a.clone()) {
        let x = chol.solve(b);
        check_finite(&x, what)?;
        return Ok(x);
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| KfmcError::num(format!("{what}: singular matrix")))?;
    check_finite(&x, what)?;
    Ok(x)
}

/// `g * a^{-1}` for symmetric `a`, computed as `(a^{-1} g')'`.
pub fn right_solve_sym(g: &DMatrix<f64>, a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(sym_solve(a, &g.transpose(), what)?.transpose())
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn sym_spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    nalgebra::SymmetricEigen::new(a.clone()).eigenvalues.amax()
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn check_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KfmcError::num(format!("{what}: non-finite values")))
    }
}

pub fn check_finite_vec(a: &DVector<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KfmcError::num(format!("{what}: non-finite values")))
    }
}

/// Floors `|v|` at `floor` while keeping its sign; zero maps to `+floor`.
pub fn signed_floor(v: f64, floor: f64) -> f64 {
    if v.abs() >= floor {
        v
    } else if v < 0.0 {
        -floor
    } else {
        floor
    }
}

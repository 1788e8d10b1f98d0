//! Batch kernelized factorization matrix completion.
//!
//! Minimizes
//!
//! ```text
//! l(Z, D, X) = 1/2 Tr(K_XX - 2 K_XD Z + Z' K_DD Z) + alpha/2 Tr(K_DD) + beta/2 |Z|_F^2
//! ```
//!
//! subject to `X` agreeing with the observed entries, by block coordinate descent:
//! an exact solve for `Z`, then relaxed Newton steps (with momentum) for `D` and
//! for the missing entries of `X`.
//!
//! Only the diagonal of `K_XX` ever enters the objective or the updates, so no
//! `n x n` matrix is formed.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KfmcError, Result};
use crate::kernel::KernelSpec;
use crate::linalg;
use crate::masked::MaskedMatrix;

/// Floor applied to the per-column curvature of the `X` step.
pub const CURVATURE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfflineHyperparams {
    /// Number of dictionary atoms (columns of `D`).
    pub r: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Newton relaxation, `> 1`.
    pub tau: f64,
    /// Momentum, in `[0, 1)`.
    pub eta: f64,
    pub t_max: usize,
    /// Stop when the relative objective change over one iteration drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl OfflineHyperparams {
    pub fn new(r: usize) -> Self {
        OfflineHyperparams {
            r,
            alpha: 0.01,
            beta: 0.01,
            tau: 2.0,
            eta: 0.5,
            t_max: 500,
            tol: 1e-6,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 1 {
            return Err(KfmcError::arg("r must be >= 1"));
        }
        if !(self.tau > 1.0) {
            return Err(KfmcError::arg(format!("tau must be > 1, got {}", self.tau)));
        }
        if !(self.alpha >= 0.0) {
            return Err(KfmcError::arg(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        // beta = 0 is allowed when K_DD itself is nonsingular; the solve reports otherwise.
        if !(self.beta >= 0.0) {
            return Err(KfmcError::arg(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return Err(KfmcError::arg(format!(
                "eta must be in [0, 1), got {}",
                self.eta
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(KfmcError::arg("tol must be >= 0"));
        }
        Ok(())
    }
}

/// Objective value `l(Z, D, X)`.
pub fn objective(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    z: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> f64 {
    let k_xd = spec.kernel_matrix_unchecked(x, d);
    let k_dd = spec.gram(d);
    objective_with(spec, x, &k_xd, &k_dd, z, alpha, beta)
}

fn self_kernel(spec: &KernelSpec, x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        x.ncols(),
        x.column_iter()
            .map(|c| spec.eval_unchecked(c.as_slice(), c.as_slice())),
    )
}

fn objective_with(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    k_xd: &DMatrix<f64>,
    k_dd: &DMatrix<f64>,
    z: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> f64 {
    let tr_xx = self_kernel(spec, x).sum();
    // Tr(K_XD Z) = sum_ij K_XD[i, j] Z[j, i]
    let tr_xdz = k_xd.transpose().component_mul(z).sum();
    let tr_zkz = (k_dd * z).component_mul(z).sum();
    0.5 * tr_xx - tr_xdz + 0.5 * tr_zkz + 0.5 * alpha * k_dd.trace() + 0.5 * beta * z.norm_squared()
}

/// Closed-form coefficient update `Z = (K_DD + beta I)^{-1} K_XD'`.
pub fn update_z(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    beta: f64,
) -> Result<DMatrix<f64>> {
    let k_xd = spec.kernel_matrix_unchecked(x, d);
    let k_dd = spec.gram(d);
    solve_z(&k_dd, &k_xd, beta)
}

fn solve_z(k_dd: &DMatrix<f64>, k_xd: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    let mut a = k_dd.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += beta;
    }
    linalg::spd_solve(&a, &k_xd.transpose(), "Z update (K_DD + beta I)")
}

/// A relaxed Newton step for `D` together with the quantities it was built from.
#[derive(Debug, Clone)]
pub struct DStep {
    /// The step `Delta_D`; the update is `D <- D - Delta_D`.
    pub delta: DMatrix<f64>,
    /// Polynomial: gradient of the frozen-weight surrogate. RBF: gradient of the objective.
    pub grad: DMatrix<f64>,
    /// `r x r` curvature the gradient is right-divided by (before ridge and `1/tau`).
    pub curvature: DMatrix<f64>,
}

/// Relaxed Newton step for the dictionary.
pub fn newton_step_d(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    z: &DMatrix<f64>,
    alpha: f64,
    tau: f64,
) -> Result<DStep> {
    let (grad, curvature) = match *spec {
        KernelSpec::Polynomial { .. } => {
            let w1 = spec.power_weights(&(x.transpose() * d))?;
            let w2 = spec.power_weights(&(d.transpose() * d))?;
            poly_d_parts(x, d, z, &w1, &w2, alpha)
        }
        KernelSpec::Rbf { .. } => {
            let k_xd = spec.kernel_matrix_unchecked(x, d);
            let k_dd = spec.gram(d);
            rbf_d_parts(spec, x, d, z, &k_xd, &k_dd, alpha)
        }
    };
    linalg::check_finite(&grad, "D gradient")?;
    let delta = if grad.iter().all(|&v| v == 0.0) {
        DMatrix::zeros(d.nrows(), d.ncols())
    } else {
        let h = linalg::ridged(&linalg::symmetrize(&curvature));
        linalg::right_solve_sym(&grad, &h, "D step")? / tau
    };
    Ok(DStep {
        delta,
        grad,
        curvature,
    })
}

/// `g_D = -X (W1 .* Z') + D ((ZZ' + alpha I) .* W2)`, `H_D = ZZ' .* W2 + alpha W2 .* I`.
fn poly_d_parts(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    z: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    alpha: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let zzt = z * z.transpose();
    let mut h = zzt.component_mul(w2);
    for i in 0..h.nrows() {
        h[(i, i)] += alpha * w2[(i, i)];
    }
    let g = -(x * w1.component_mul(&z.transpose())) + d * &h;
    (g, h)
}

/// RBF gradient and approximate Hessian for `D`.
///
/// With `k(x, d) = exp(-|x - d|^2 / sigma^2)`, `dk/dd = rate (x - d) k` where `rate = 2 / sigma^2`:
///
/// ```text
/// grad = rate (X Q1 - D G1) + 2 rate (D Q2 - D G2)
/// B    = rate (2 Q2 - G1 - 2 G2)
/// Q1 = -Z' .* K_XD,  Q2 = (ZZ' + alpha I) .* K_DD / 2,  G1 = diag(1'Q1),  G2 = diag(1'Q2)
/// ```
fn rbf_d_parts(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    z: &DMatrix<f64>,
    k_xd: &DMatrix<f64>,
    k_dd: &DMatrix<f64>,
    alpha: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let rate = spec.rbf_rate();
    let r = d.ncols();
    let q1 = -z.transpose().component_mul(k_xd);
    let mut s = z * z.transpose();
    for i in 0..r {
        s[(i, i)] += alpha;
    }
    let q2 = s.component_mul(k_dd) * 0.5;
    let g1 = DVector::from_iterator(r, q1.column_iter().map(|c| c.sum()));
    let g2 = DVector::from_iterator(r, q2.column_iter().map(|c| c.sum()));
    let mut grad = (x * &q1) * rate + (d * &q2) * (2.0 * rate);
    for j in 0..r {
        let coef = rate * g1[j] + 2.0 * rate * g2[j];
        let mut col = grad.column_mut(j);
        col.axpy(-coef, &d.column(j), 1.0);
    }
    let mut b = &q2 * 2.0;
    for j in 0..r {
        b[(j, j)] -= g1[j] + 2.0 * g2[j];
    }
    (grad, b * rate)
}

/// Relaxed Newton step for `X`, applied to every entry (callers re-project).
#[derive(Debug, Clone)]
pub struct XStep {
    pub delta: DMatrix<f64>,
    pub grad: DMatrix<f64>,
    /// Per-column curvature the gradient is divided by (after flooring).
    pub curvature: DVector<f64>,
}

pub fn newton_step_x(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    z: &DMatrix<f64>,
    tau: f64,
) -> Result<XStep> {
    let n = x.ncols();
    let (grad, curvature) = match *spec {
        KernelSpec::Polynomial { c, q } => {
            let qf = q as f64;
            // w = diag(W3) = (|x_i|^2 + c)^(q-1)
            let w = DVector::from_iterator(
                n,
                x.column_iter()
                    .map(|col| (col.norm_squared() + c).powi(q as i32 - 1)),
            );
            let w4 = spec.power_weights(&(x.transpose() * d))?;
            let mut g = d * w4.transpose().component_mul(z) * (-qf);
            for i in 0..n {
                g.column_mut(i).axpy(qf * w[i], &x.column(i), 1.0);
            }
            let curv = w.map(|v| v.max(CURVATURE_FLOOR));
            (g, curv)
        }
        KernelSpec::Rbf { .. } => {
            let rate = spec.rbf_rate();
            let k_xd = spec.kernel_matrix_unchecked(x, d);
            let q3 = -z.component_mul(&k_xd.transpose());
            let g3 = DVector::from_iterator(n, q3.column_iter().map(|c| c.sum()));
            // Q4 = 0.5 I .* K_XX is diagonal, so G4 = Q4: the X Q4 - X G4 gradient term
            // vanishes and the curvature 2 Q4 - G3 - 2 G4 reduces to -G3.
            let mut g = (d * &q3) * rate;
            for i in 0..n {
                g.column_mut(i).axpy(-rate * g3[i], &x.column(i), 1.0);
            }
            let curv = g3.map(|v| linalg::signed_floor(-rate * v, CURVATURE_FLOOR));
            (g, curv)
        }
    };
    linalg::check_finite(&grad, "X gradient")?;
    let mut delta = grad.clone();
    for i in 0..n {
        delta.column_mut(i).scale_mut(1.0 / (tau * curvature[i]));
    }
    linalg::check_finite(&delta, "X step")?;
    Ok(XStep {
        delta,
        grad,
        curvature,
    })
}

/// Exact gradients of the objective with respect to `D` and `X`.
pub fn gradients(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    z: &DMatrix<f64>,
    alpha: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    match *spec {
        KernelSpec::Polynomial { q, .. } => {
            let w1 = spec.power_weights(&(x.transpose() * d))?;
            let w2 = spec.power_weights(&(d.transpose() * d))?;
            let (g, _) = poly_d_parts(x, d, z, &w1, &w2, alpha);
            let gx = newton_step_x(spec, x, d, z, 2.0)?.grad;
            Ok((g * q as f64, gx))
        }
        KernelSpec::Rbf { .. } => {
            let k_xd = spec.kernel_matrix_unchecked(x, d);
            let k_dd = spec.gram(d);
            let (gd, _) = rbf_d_parts(spec, x, d, z, &k_xd, &k_dd, alpha);
            let gx = newton_step_x(spec, x, d, z, 2.0)?.grad;
            Ok((gd, gx))
        }
    }
}

#[derive(Debug, Clone)]
pub struct OfflineModel {
    pub d: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub data: MaskedMatrix,
    pub mom_d: DMatrix<f64>,
    pub mom_x: DMatrix<f64>,
    /// Objective after the first `Z` solve, then after each outer iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Steps rejected by the descent guard (D and X combined).
    pub rejected_steps: usize,
}

impl OfflineModel {
    pub fn x(&self) -> &DMatrix<f64> {
        self.data.x()
    }

    pub fn objective(&self, spec: &KernelSpec, alpha: f64, beta: f64) -> f64 {
        objective(spec, self.data.x(), &self.d, &self.z, alpha, beta)
    }
}

/// A run that hit a numerical failure; carries the last valid iterate.
#[derive(Debug)]
pub struct FitFailure {
    pub error: KfmcError,
    pub model: Box<OfflineModel>,
}

impl fmt::Display for FitFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} iterations)",
            self.error, self.model.iterations
        )
    }
}

impl std::error::Error for FitFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<FitFailure> for KfmcError {
    fn from(f: FitFailure) -> Self {
        f.error
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Starting dictionary; drawn from N(0, 1) when absent.
    pub d_init: Option<DMatrix<f64>>,
    /// Skip the `X` update (dictionary training on complete data).
    pub freeze_x: bool,
}

pub(crate) fn gaussian_matrix(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(rng))
}

/// Runs batch completion with default options.
pub fn fit(
    data: &MaskedMatrix,
    spec: &KernelSpec,
    hp: &OfflineHyperparams,
) -> std::result::Result<OfflineModel, FitFailure> {
    fit_with(data, spec, hp, &FitOptions::default())
}

pub fn fit_with(
    data: &MaskedMatrix,
    spec: &KernelSpec,
    hp: &OfflineHyperparams,
    opts: &FitOptions,
) -> std::result::Result<OfflineModel, FitFailure> {
    let (m, n) = (data.nrows(), data.ncols());
    let d = match &opts.d_init {
        Some(d0) => d0.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
            gaussian_matrix(m, hp.r, &mut rng)
        }
    };
    let r = d.ncols();
    let mut model = OfflineModel {
        z: DMatrix::zeros(r, n),
        mom_d: DMatrix::zeros(m, r),
        mom_x: DMatrix::zeros(m, n),
        d,
        data: data.clone(),
        trace: Vec::new(),
        iterations: 0,
        converged: false,
        rejected_steps: 0,
    };
    let setup = || -> Result<()> {
        spec.validate()?;
        hp.validate()?;
        if data.mask().observed_count() == 0 {
            return Err(KfmcError::arg("no observed entries"));
        }
        if model.d.nrows() != m {
            return Err(KfmcError::arg(format!(
                "initial D has {} rows, data has {m}",
                model.d.nrows()
            )));
        }
        Ok(())
    };
    if let Err(error) = setup() {
        return Err(FitFailure {
            error,
            model: Box::new(model),
        });
    }
    match run(&mut model, spec, hp, opts.freeze_x) {
        Ok(()) => Ok(model),
        Err(error) => Err(FitFailure {
            error,
            model: Box::new(model),
        }),
    }
}

/// Runs `restarts` fits with seeds `hp.seed, hp.seed + 1, ...` and keeps the one
/// with the lowest final objective. Fails only if every run fails.
pub fn fit_restarts(
    data: &MaskedMatrix,
    spec: &KernelSpec,
    hp: &OfflineHyperparams,
    restarts: usize,
) -> std::result::Result<OfflineModel, FitFailure> {
    let mut best: Option<OfflineModel> = None;
    let mut first_failure = None;
    for k in 0..restarts.max(1) as u64 {
        let hp_k = OfflineHyperparams {
            seed: hp.seed.wrapping_add(k),
            ..*hp
        };
        match fit(data, spec, &hp_k) {
            Ok(model) => {
                let better = best
                    .as_ref()
                    .is_none_or(|b| model.trace.last() < b.trace.last());
                if better {
                    best = Some(model);
                }
            }
            Err(e) => {
                first_failure.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_failure.expect("at least one run"))
}

fn run(
    model: &mut OfflineModel,
    spec: &KernelSpec,
    hp: &OfflineHyperparams,
    freeze_x: bool,
) -> Result<()> {
    for t in 1..=hp.t_max {
        let x = model.data.x();
        let k_xd = spec.kernel_matrix_unchecked(x, &model.d);
        let k_dd = spec.gram(&model.d);
        let z = solve_z(&k_dd, &k_xd, hp.beta).map_err(|e| at_iter(e, t))?;
        let mut current = objective_with(spec, x, &k_xd, &k_dd, &z, hp.alpha, hp.beta);
        if !current.is_finite() {
            return Err(at_iter(KfmcError::num("objective is not finite"), t));
        }
        model.z = z;
        if t == 1 {
            model.trace.push(current);
        }

        let step = newton_step_d(spec, model.data.x(), &model.d, &model.z, hp.alpha, hp.tau)
            .map_err(|e| at_iter(e, t))?;
        let eval_d =
            |d: &DMatrix<f64>| objective(spec, model.data.x(), d, &model.z, hp.alpha, hp.beta);
        match guarded_update(&model.d, &model.mom_d, &step.delta, hp.eta, current, eval_d) {
            Some((d, mom, value)) => {
                model.d = d;
                model.mom_d = mom;
                current = value;
            }
            None => {
                model.mom_d.fill(0.0);
                model.rejected_steps += 1;
            }
        }

        if !freeze_x {
            let step = newton_step_x(spec, model.data.x(), &model.d, &model.z, hp.tau)
                .map_err(|e| at_iter(e, t))?;
            let mask = model.data.mask().clone();
            let observed = model.data.observed_values().clone();
            let project = |x: &mut DMatrix<f64>| {
                let rows = x.nrows();
                for (k, v) in x.as_mut_slice().iter_mut().enumerate() {
                    if mask.is_observed(k % rows, k / rows) {
                        *v = observed.as_slice()[k];
                    }
                }
            };
            let eval_x = |x: &DMatrix<f64>| {
                let mut xp = x.clone();
                project(&mut xp);
                objective(spec, &xp, &model.d, &model.z, hp.alpha, hp.beta)
            };
            match guarded_update(
                model.data.x(),
                &model.mom_x,
                &step.delta,
                hp.eta,
                current,
                eval_x,
            ) {
                Some((x, mom, value)) => {
                    *model.data.x_mut() = x;
                    model.data.project_observed();
                    model.mom_x = mom;
                    current = value;
                }
                None => {
                    model.mom_x.fill(0.0);
                    model.rejected_steps += 1;
                }
            }
        }

        let prev = *model.trace.last().unwrap();
        model.trace.push(current);
        model.iterations = t;
        if (prev - current).abs() <= hp.tol * prev.abs().max(f64::MIN_POSITIVE) {
            model.converged = true;
            break;
        }
    }
    Ok(())
}

fn at_iter(e: KfmcError, t: usize) -> KfmcError {
    match e {
        KfmcError::Numerical(msg) => KfmcError::Numerical(format!("{msg} (iteration {t})")),
        other => other,
    }
}

/// Momentum step with a descent guard.
///
/// Candidates, in order: `eta*mom + delta`, `eta*mom + delta/2` (tau doubled), and,
/// when momentum is active, `delta/2` alone. The first candidate that does not
/// increase the objective is taken and becomes the new momentum buffer. `None`
/// means every candidate increased the objective; the iterate is left unchanged.
pub(crate) fn guarded_update(
    current: &DMatrix<f64>,
    mom: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    eta: f64,
    value: f64,
    eval: impl Fn(&DMatrix<f64>) -> f64,
) -> Option<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let carried = mom * eta;
    let mut candidates = vec![&carried + delta, &carried + delta * 0.5];
    if eta > 0.0 && carried.iter().any(|&v| v != 0.0) {
        candidates.push(delta * 0.5);
    }
    for step in candidates {
        let next = current - &step;
        let v = eval(&next);
        if v.is_finite() && v <= value {
            return Some((next, step, v));
        }
    }
    None
}

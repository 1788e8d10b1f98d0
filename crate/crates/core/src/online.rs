//! Streaming completion: each incoming column is completed against the current
//! dictionary, then the dictionary takes one normalized gradient step.
//!
//! The model holds only `D` (m x r), its momentum buffer and `K_DD`-sized
//! temporaries; nothing scales with the number of samples seen.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KfmcError, Result};
use crate::kernel::KernelSpec;
use crate::linalg;
use crate::masked::Mask;
use crate::offline::{gaussian_matrix, CURVATURE_FLOOR};

/// Floor on the step normalizer of the dictionary update.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineHyperparams {
    pub r: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub eta: f64,
    /// Inner iterations per sample.
    pub n_iter: usize,
    /// Passes over the stream.
    pub n_pass: usize,
    pub tol: f64,
    pub seed: u64,
}

impl OnlineHyperparams {
    pub fn new(r: usize) -> Self {
        OnlineHyperparams {
            r,
            alpha: 0.01,
            beta: 0.01,
            tau: 2.0,
            eta: 0.5,
            n_iter: 30,
            n_pass: 1,
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
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(KfmcError::arg("alpha and beta must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return Err(KfmcError::arg(format!(
                "eta must be in [0, 1), got {}",
                self.eta
            )));
        }
        if self.n_iter < 1 || self.n_pass < 1 {
            return Err(KfmcError::arg("n_iter and n_pass must be >= 1"));
        }
        Ok(())
    }
}

/// Records the largest temporary allocated on the per-sample path, in elements.
#[derive(Debug, Default)]
pub struct BufferProbe(AtomicUsize);

impl BufferProbe {
    #[inline]
    pub fn note(&self, elems: usize) {
        self.0.fetch_max(elems, Ordering::Relaxed);
    }

    pub fn peak(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }
}

/// Result of completing one sample.
#[derive(Debug, Clone)]
pub struct SampleFit {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub iterations: usize,
    /// Relative change of the missing entries fell below `tol`.
    pub converged: bool,
    /// The inner loop ran for `n_iter` iterations.
    pub exhausted: bool,
    /// Per-sample objective (without the constant dictionary term) after each z-step and after each x-step.
    pub objective_trace: Vec<f64>,
}

/// Per-sample solver with the `(K_DD + beta I)` factorization computed once.
pub(crate) struct SampleSolver<'a> {
    spec: KernelSpec,
    d: &'a DMatrix<f64>,
    k_dd: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    beta: f64,
    tau: f64,
    eta: f64,
    n_iter: usize,
    tol: f64,
    pub(crate) probe: &'a BufferProbe,
}

impl<'a> SampleSolver<'a> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        spec: &KernelSpec,
        d: &'a DMatrix<f64>,
        beta: f64,
        tau: f64,
        eta: f64,
        n_iter: usize,
        tol: f64,
        probe: &'a BufferProbe,
    ) -> Result<Self> {
        let r = d.ncols();
        let k_dd = spec.gram(d);
        let mut a = k_dd.clone();
        for i in 0..r {
            a[(i, i)] += beta;
        }
        probe.note(d.len());
        probe.note(2 * r * r);
        let chol = Cholesky::new(a)
            .ok_or_else(|| KfmcError::num("K_DD + beta I is not positive definite"))?;
        Ok(SampleSolver {
            spec: *spec,
            d,
            k_dd,
            chol,
            beta,
            tau,
            eta,
            n_iter,
            tol,
            probe,
        })
    }

    fn k_xd(&self, x: &DVector<f64>) -> DVector<f64> {
        let xs = x.as_slice();
        DVector::from_iterator(
            self.d.ncols(),
            self.d
                .column_iter()
                .map(|c| self.spec.eval_unchecked(xs, c.as_slice())),
        )
    }

    fn solve_z(&self, k_xd: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(k_xd)
    }

    /// `1/2 k_xx - k_xD z + 1/2 z' K_DD z + beta/2 |z|^2`
    pub(crate) fn loss(&self, x: &DVector<f64>, k_xd: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let k_xx = self.spec.eval_unchecked(x.as_slice(), x.as_slice());
        0.5 * k_xx - k_xd.dot(z)
            + 0.5 * (&self.k_dd * z).dot(z)
            + 0.5 * self.beta * z.norm_squared()
    }

    /// Relaxed Newton step for `x` (all entries; the caller restricts it).
    fn x_step(&self, x: &DVector<f64>, k_xd: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        match self.spec {
            KernelSpec::Polynomial { c, q } => {
                let w1 = (x.norm_squared() + c)
                    .powi(q as i32 - 1)
                    .max(CURVATURE_FLOOR);
                let w2 = (self.d.transpose() * x).map(|v| (v + c).powi(q as i32 - 1));
                let grad = x * w1 - self.d * w2.component_mul(z);
                grad / (self.tau * w1)
            }
            KernelSpec::Rbf { .. } => {
                let rate = self.spec.rbf_rate();
                let qv = -z.component_mul(k_xd);
                let gamma = linalg::signed_floor(qv.sum(), CURVATURE_FLOOR);
                let grad = (self.d * &qv - x * gamma) * rate;
                // Curvature of the loss in x with q, gamma frozen is -rate * gamma.
                grad / (-self.tau * rate * gamma)
            }
        }
    }

    /// Alternating z / x updates on the entries listed in `missing`.
    pub(crate) fn complete(&self, mut x: DVector<f64>, missing: &[usize]) -> Result<SampleFit> {
        let m = x.len();
        self.probe.note(m);
        let mut mom = DVector::<f64>::zeros(m);
        let mut trace = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        if missing.is_empty() {
            let k_xd = self.k_xd(&x);
            let z = self.solve_z(&k_xd);
            trace.push(self.loss(&x, &k_xd, &z));
            return Ok(SampleFit {
                x,
                z,
                iterations: 0,
                converged: true,
                exhausted: false,
                objective_trace: trace,
            });
        }
        for l in 1..=self.n_iter {
            iterations = l;
            let k_xd = self.k_xd(&x);
            let z = self.solve_z(&k_xd);
            let current = self.loss(&x, &k_xd, &z);
            trace.push(current);
            let full = self.x_step(&x, &k_xd, &z);
            let mut delta = DVector::<f64>::zeros(m);
            for &i in missing {
                delta[i] = full[i];
            }
            if !delta.iter().all(|v| v.is_finite()) {
                return Err(KfmcError::num("non-finite x step"));
            }
            let carried = &mom * self.eta;
            let mut candidates = vec![&carried + &delta, &carried + &delta * 0.5];
            if self.eta > 0.0 && carried.iter().any(|&v| v != 0.0) {
                candidates.push(&delta * 0.5);
            }
            let mut accepted = None;
            for step in candidates {
                let next = &x - &step;
                let v = self.loss(&next, &self.k_xd(&next), &z);
                if v.is_finite() && v <= current {
                    accepted = Some((next, step, v));
                    break;
                }
            }
            let Some((next, step, v)) = accepted else {
                converged = true;
                break;
            };
            trace.push(v);
            let change: f64 = missing
                .iter()
                .map(|&i| step[i] * step[i])
                .sum::<f64>()
                .sqrt();
            let scale: f64 = missing.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
            x = next;
            mom = step;
            if change <= self.tol * scale.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        let k_xd = self.k_xd(&x);
        let z = self.solve_z(&k_xd);
        if !z.iter().all(|v| v.is_finite()) || !x.iter().all(|v| v.is_finite()) {
            return Err(KfmcError::num("non-finite sample completion"));
        }
        trace.push(self.loss(&x, &k_xd, &z));
        Ok(SampleFit {
            x,
            z,
            iterations,
            converged,
            exhausted: iterations == self.n_iter,
            objective_trace: trace,
        })
    }
}

/// One dictionary step and the quantities it was built from.
#[derive(Debug, Clone)]
pub struct DictionaryStep {
    pub delta: DMatrix<f64>,
    pub grad: DMatrix<f64>,
    /// Spectral norm the gradient was divided by.
    pub tau0: f64,
}

/// Normalized gradient step for `D` from a single completed sample.
pub fn dictionary_step(
    spec: &KernelSpec,
    d: &DMatrix<f64>,
    x: &DVector<f64>,
    z: &DVector<f64>,
    alpha: f64,
    tau: f64,
) -> Result<DictionaryStep> {
    let r = d.ncols();
    let zzt = z * z.transpose();
    let (grad, curvature) = match *spec {
        KernelSpec::Polynomial { c, q } => {
            let w1 = (d.transpose() * x).map(|v| (v + c).powi(q as i32 - 1));
            let w2 = spec.power_weights(&(d.transpose() * d))?;
            let mut h = zzt.component_mul(&w2);
            for i in 0..r {
                h[(i, i)] += alpha * w2[(i, i)];
            }
            let g = -(x * w1.component_mul(z).transpose()) + d * &h;
            (g, h)
        }
        KernelSpec::Rbf { .. } => {
            let rate = spec.rbf_rate();
            let xs = x.as_slice();
            let k_xd = DVector::from_iterator(
                r,
                d.column_iter()
                    .map(|c| spec.eval_unchecked(xs, c.as_slice())),
            );
            let k_dd = spec.gram(d);
            let q1 = -z.component_mul(&k_xd);
            let mut s = zzt;
            for i in 0..r {
                s[(i, i)] += alpha;
            }
            let q2 = s.component_mul(&k_dd) * 0.5;
            let g2 = DVector::from_iterator(r, q2.column_iter().map(|c| c.sum()));
            // G1 = diag(Q1): with one sample, Q1 is a single row.
            let mut g = (x * q1.transpose()) * rate + (d * &q2) * (2.0 * rate);
            for j in 0..r {
                let coef = rate * q1[j] + 2.0 * rate * g2[j];
                g.column_mut(j).axpy(-coef, &d.column(j), 1.0);
            }
            let mut b = &q2 * 2.0;
            for j in 0..r {
                b[(j, j)] -= q1[j] + 2.0 * g2[j];
            }
            (g, b * rate)
        }
    };
    linalg::check_finite(&grad, "dictionary gradient")?;
    let tau0 = linalg::sym_spectral_norm(&curvature).max(NORM_FLOOR);
    let delta = &grad / (tau * tau0);
    Ok(DictionaryStep { delta, grad, tau0 })
}

/// Dictionary, momentum and running statistics of a stream.
#[derive(Debug, Clone)]
pub struct OnlineModel {
    pub spec: KernelSpec,
    pub hp: OnlineHyperparams,
    pub d: DMatrix<f64>,
    pub mom_d: DMatrix<f64>,
    pub samples_seen: usize,
    /// Running empirical cost `g_t` after each sample.
    pub cost_trace: Vec<f64>,
    /// Running empirical recovery error `e_t` after each sample (with ground truth).
    pub err_trace: Vec<f64>,
    /// Largest temporary buffer observed on the per-sample path, in elements.
    pub peak_buffer: usize,
}

impl OnlineModel {
    /// Fresh model with `D ~ N(0, 1)` drawn from `hp.seed`.
    pub fn new(m: usize, spec: &KernelSpec, hp: &OnlineHyperparams) -> Result<Self> {
        spec.validate()?;
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let d = gaussian_matrix(m, hp.r, &mut rng);
        Ok(Self::from_dictionary(d, spec, hp))
    }

    pub fn from_dictionary(d: DMatrix<f64>, spec: &KernelSpec, hp: &OnlineHyperparams) -> Self {
        let mut hp = *hp;
        hp.r = d.ncols();
        OnlineModel {
            spec: *spec,
            hp,
            mom_d: DMatrix::zeros(d.nrows(), d.ncols()),
            d,
            samples_seen: 0,
            cost_trace: Vec::new(),
            err_trace: Vec::new(),
            peak_buffer: 0,
        }
    }

    pub fn nrows(&self) -> usize {
        self.d.nrows()
    }

    /// Elements held by the model state proper (`D`, its momentum).
    pub fn state_len(&self) -> usize {
        self.d.len() + self.mom_d.len()
    }

    /// Completes one sample against the current dictionary without changing it.
    /// `observed[i]` marks entry `i` as observed; other entries of `x` are starting values.
    pub fn infer_sample(&self, x: &DVector<f64>, observed: &[bool]) -> Result<SampleFit> {
        let probe = BufferProbe::default();
        self.infer_with(x, observed, &probe)
    }

    fn infer_with(
        &self,
        x: &DVector<f64>,
        observed: &[bool],
        probe: &BufferProbe,
    ) -> Result<SampleFit> {
        if x.len() != self.nrows() || observed.len() != self.nrows() {
            return Err(KfmcError::arg(format!(
                "sample has length {} (mask {}), model expects {}",
                x.len(),
                observed.len(),
                self.nrows()
            )));
        }
        let solver = SampleSolver::new(
            &self.spec,
            &self.d,
            self.hp.beta,
            self.hp.tau,
            self.hp.eta,
            self.hp.n_iter,
            self.hp.tol,
            probe,
        )?;
        let missing: Vec<usize> = (0..x.len()).filter(|&i| !observed[i]).collect();
        solver.complete(x.clone(), &missing)
    }

    /// Starting values for missing entries: the row means of `D`'s columns.
    pub fn prior_mean(&self) -> DVector<f64> {
        DVector::from_iterator(self.nrows(), self.d.row_iter().map(|r| r.mean()))
    }

    /// Applies one momentum dictionary step from a completed sample.
    pub fn update_dictionary(
        &mut self,
        x: &DVector<f64>,
        z: &DVector<f64>,
    ) -> Result<DictionaryStep> {
        let step = dictionary_step(&self.spec, &self.d, x, z, self.hp.alpha, self.hp.tau)?;
        self.peak_buffer = self
            .peak_buffer
            .max(step.grad.len())
            .max(self.d.ncols() * self.d.ncols());
        self.mom_d *= self.hp.eta;
        self.mom_d += &step.delta;
        self.d -= &self.mom_d;
        linalg::check_finite(&self.d, "dictionary")?;
        Ok(step)
    }

    /// Completes a sample, then updates the dictionary from it.
    pub fn step(&mut self, x: &DVector<f64>, observed: &[bool]) -> Result<SampleFit> {
        let probe = BufferProbe::default();
        let fit = self.infer_with(x, observed, &probe)?;
        self.peak_buffer = self.peak_buffer.max(probe.peak());
        self.update_dictionary(&fit.x, &fit.z)?;
        self.samples_seen += 1;
        Ok(fit)
    }

    /// Per-sample cost with the dictionary penalty spread over `n` samples.
    fn sample_cost(&self, fit: &SampleFit, n: usize) -> f64 {
        let data_term = *fit.objective_trace.last().unwrap_or(&0.0);
        let tr_dd = if self.spec.is_rbf() {
            self.d.ncols() as f64
        } else {
            self.d
                .column_iter()
                .map(|c| self.spec.eval_unchecked(c.as_slice(), c.as_slice()))
                .sum()
        };
        data_term + self.hp.alpha / (2.0 * n as f64) * tr_dd
    }
}

/// Output of a full stream run.
#[derive(Debug, Clone)]
pub struct StreamResult {
    /// Completed columns in stream order.
    pub completed: DMatrix<f64>,
    pub model: OnlineModel,
    /// `g_t` at the end of each pass.
    pub pass_costs: Vec<f64>,
    /// `e_t` at the end of each pass (with ground truth).
    pub pass_errors: Vec<f64>,
    /// Samples whose inner loop converged / exhausted `n_iter` in the final pass.
    pub converged_samples: usize,
    pub exhausted_samples: usize,
}

/// A stream that hit an error; carries the model and traces up to that point.
#[derive(Debug)]
pub struct StreamFailure {
    pub error: KfmcError,
    pub model: Box<OnlineModel>,
}

impl fmt::Display for StreamFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} samples)",
            self.error, self.model.samples_seen
        )
    }
}

impl std::error::Error for StreamFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<StreamFailure> for KfmcError {
    fn from(f: StreamFailure) -> Self {
        f.error
    }
}

/// Streams the columns of `data` (observed where `mask` says so) through `model`
/// for `model.hp.n_pass` passes.
pub fn run_stream_with(
    mut model: OnlineModel,
    data: &DMatrix<f64>,
    mask: &Mask,
    truth: Option<&DMatrix<f64>>,
) -> std::result::Result<StreamResult, StreamFailure> {
    let (m, n) = data.shape();
    let mut shape_error = None;
    if m != model.nrows() || mask.nrows() != m || mask.ncols() != n {
        shape_error = Some("stream data, mask and dictionary shapes disagree");
    }
    if truth.is_some_and(|t| t.shape() != (m, n)) {
        shape_error = Some("ground truth shape differs from stream data");
    }
    if let Some(msg) = shape_error {
        return Err(StreamFailure {
            error: KfmcError::arg(msg),
            model: Box::new(model),
        });
    }
    // Completed columns carry over between passes.
    let prior = model.prior_mean();
    let mut completed = DMatrix::from_fn(m, n, |i, j| {
        if mask.is_observed(i, j) {
            data[(i, j)]
        } else {
            prior[i]
        }
    });
    let mut costs = vec![0.0; n];
    let mut errors = vec![0.0; n];
    let mut pass_costs = Vec::new();
    let mut pass_errors = Vec::new();
    let (mut converged_samples, mut exhausted_samples) = (0, 0);
    for pass in 0..model.hp.n_pass {
        converged_samples = 0;
        exhausted_samples = 0;
        for j in 0..n {
            let observed: Vec<bool> = (0..m).map(|i| mask.is_observed(i, j)).collect();
            let x0 = completed.column(j).into_owned();
            let fit = match model.step(&x0, &observed) {
                Ok(fit) => fit,
                Err(e) => {
                    let error = KfmcError::num(format!("sample {j} (pass {}): {e}", pass + 1));
                    return Err(StreamFailure {
                        error,
                        model: Box::new(model),
                    });
                }
            };
            converged_samples += fit.converged as usize;
            exhausted_samples += fit.exhausted as usize;
            completed.set_column(j, &fit.x);
            costs[j] = model.sample_cost(&fit, n);
            let seen = if pass == 0 { j + 1 } else { n };
            model
                .cost_trace
                .push(costs[..seen].iter().sum::<f64>() / seen as f64);
            if let Some(t) = truth {
                let tc = t.column(j);
                let denom = tc.norm();
                errors[j] = if denom > 0.0 {
                    (fit.x.clone() - tc).norm() / denom
                } else {
                    0.0
                };
                model
                    .err_trace
                    .push(errors[..seen].iter().sum::<f64>() / seen as f64);
            }
        }
        pass_costs.push(*model.cost_trace.last().unwrap_or(&0.0));
        if truth.is_some() {
            pass_errors.push(*model.err_trace.last().unwrap_or(&0.0));
        }
    }
    Ok(StreamResult {
        completed,
        model,
        pass_costs,
        pass_errors,
        converged_samples,
        exhausted_samples,
    })
}

/// Fresh model, then [`run_stream_with`].
pub fn run_stream(
    data: &DMatrix<f64>,
    mask: &Mask,
    spec: &KernelSpec,
    hp: &OnlineHyperparams,
    truth: Option<&DMatrix<f64>>,
) -> Result<StreamResult> {
    let model = OnlineModel::new(data.nrows(), spec, hp)?;
    Ok(run_stream_with(model, data, mask, truth)?)
}

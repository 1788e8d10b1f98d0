//! Python bindings.
//!
//! Matrices cross the boundary as lists of rows (`list[list[float]]`) and masks as
//! lists of rows of booleans, `True` meaning observed. Argument errors raise
//! `ValueError`, numerical failures `ArithmeticError`, file errors `OSError`.

use std::path::PathBuf;

use kfmc::baselines;
use kfmc::io::Checkpoint;
use kfmc::kernel;
use kfmc::metrics::{self, DEFAULT_RANK_TOL};
use kfmc::offline::{self, OfflineHyperparams};
use kfmc::online::{self, OnlineHyperparams};
use kfmc::ose::{self, OseParams};
use kfmc::sampling::{self, ProblemShape};
use kfmc::synth::{self, SyntheticSpec};
use kfmc::{DMatrix, InitStrategy, KernelSpec, KfmcError, Mask, MaskedMatrix};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;
type MaskRows = Vec<Vec<bool>>;

fn to_py(e: KfmcError) -> PyErr {
    match e {
        KfmcError::Numerical(_) | KfmcError::Overflow(_) => {
            PyArithmeticError::new_err(e.to_string())
        }
        KfmcError::Io(_) => PyOSError::new_err(e.to_string()),
        KfmcError::Argument(_) | KfmcError::Parse(_) => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &Rows) -> PyResult<DMatrix<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

fn rows(x: &DMatrix<f64>) -> Rows {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn mask(rows: &MaskRows, shape: (usize, usize)) -> PyResult<Mask> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(PyValueError::new_err(format!(
            "mask must be {}x{}",
            shape.0, shape.1
        )));
    }
    Ok(Mask::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

fn mask_rows(mask: &Mask) -> MaskRows {
    (0..mask.nrows())
        .map(|i| (0..mask.ncols()).map(|j| mask.is_observed(i, j)).collect())
        .collect()
}

/// Polynomial or RBF kernel.
#[pyclass(name = "Kernel", frozen, from_py_object)]
#[derive(Clone)]
struct PyKernel {
    spec: KernelSpec,
}

#[pymethods]
impl PyKernel {
    /// `(x'y + c)^q`.
    #[staticmethod]
    #[pyo3(signature = (c = 1.0, q = 2))]
    fn polynomial(c: f64, q: u32) -> PyResult<Self> {
        Ok(PyKernel {
            spec: KernelSpec::polynomial(c, q).map_err(to_py)?,
        })
    }

    /// `exp(-|x - y|^2 / sigma^2)`.
    #[staticmethod]
    fn rbf(sigma: f64) -> PyResult<Self> {
        Ok(PyKernel {
            spec: KernelSpec::rbf(sigma).map_err(to_py)?,
        })
    }

    fn eval(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.spec.eval(&x, &y).map_err(to_py)
    }

    /// Kernel matrix between the columns of `a` and the columns of `b`.
    fn matrix(&self, a: Rows, b: Rows) -> PyResult<Rows> {
        let k = self
            .spec
            .kernel_matrix(&matrix(&a)?, &matrix(&b)?)
            .map_err(to_py)?;
        Ok(rows(&k))
    }

    fn __repr__(&self) -> String {
        match self.spec {
            KernelSpec::Polynomial { c, q } => format!("Kernel.polynomial(c={c}, q={q})"),
            KernelSpec::Rbf { sigma } => format!("Kernel.rbf(sigma={sigma})"),
        }
    }
}

/// Result of batch completion.
#[pyclass(name = "Completion", frozen, get_all)]
struct PyCompletion {
    completed: Rows,
    dictionary: Rows,
    /// Objective after the first coefficient solve, then after each iteration.
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Batch completion of `x` where `mask` is true. Unobserved entries of `x` are ignored.
#[pyfunction]
#[pyo3(signature = (x, mask, kernel, rank, alpha = 0.01, beta = 0.01, tau = 2.0, eta = 0.5, t_max = 500, tol = 1e-6, seed = 0, restarts = 1))]
#[allow(clippy::too_many_arguments)]
fn complete(
    py: Python<'_>,
    x: Rows,
    mask: MaskRows,
    kernel: PyKernel,
    rank: usize,
    alpha: f64,
    beta: f64,
    tau: f64,
    eta: f64,
    t_max: usize,
    tol: f64,
    seed: u64,
    restarts: usize,
) -> PyResult<PyCompletion> {
    let values = matrix(&x)?;
    let mask = self::mask(&mask, values.shape())?;
    let data = MaskedMatrix::impute_init(&values, &mask, InitStrategy::RowMean).map_err(to_py)?;
    let hp = OfflineHyperparams {
        r: rank,
        alpha,
        beta,
        tau,
        eta,
        t_max,
        tol,
        seed,
    };
    let model = py
        .detach(|| offline::fit_restarts(&data, &kernel.spec, &hp, restarts))
        .map_err(|f| to_py(f.error))?;
    Ok(PyCompletion {
        completed: rows(model.x()),
        dictionary: rows(&model.d),
        trace: model.trace,
        iterations: model.iterations,
        converged: model.converged,
    })
}

/// Low-rank factorization baseline; returns `(completed, objective_trace)`.
#[pyfunction]
#[pyo3(signature = (x, mask, rank, lam = 1e-3, iters = 100))]
fn lrf_complete(
    py: Python<'_>,
    x: Rows,
    mask: MaskRows,
    rank: usize,
    lam: f64,
    iters: usize,
) -> PyResult<(Rows, Vec<f64>)> {
    let values = matrix(&x)?;
    let mask = self::mask(&mask, values.shape())?;
    let data = MaskedMatrix::impute_init(&values, &mask, InitStrategy::RowMean).map_err(to_py)?;
    let res = py
        .detach(|| baselines::lrf_complete(&data, rank, lam, iters))
        .map_err(to_py)?;
    Ok((rows(&res.completed), res.objective_trace))
}

/// Completes the columns of `samples` against a fixed dictionary.
#[pyfunction]
#[pyo3(signature = (dictionary, samples, mask, kernel, beta = 0.01, tau = 2.0, eta = 0.5, n_iter = 30, tol = 1e-6))]
#[allow(clippy::too_many_arguments)]
fn complete_new(
    py: Python<'_>,
    dictionary: Rows,
    samples: Rows,
    mask: MaskRows,
    kernel: PyKernel,
    beta: f64,
    tau: f64,
    eta: f64,
    n_iter: usize,
    tol: f64,
) -> PyResult<Rows> {
    let d = matrix(&dictionary)?;
    let x = matrix(&samples)?;
    let mask = self::mask(&mask, x.shape())?;
    let params = OseParams {
        beta,
        tau,
        eta,
        n_iter,
        tol,
    };
    let res = py
        .detach(|| ose::complete_new(&d, &x, &mask, &kernel.spec, &params))
        .map_err(to_py)?;
    Ok(rows(&res.completed))
}

/// Streaming model: a dictionary updated one column at a time.
#[pyclass(name = "OnlineModel")]
struct PyOnlineModel {
    model: online::OnlineModel,
}

#[pymethods]
impl PyOnlineModel {
    #[new]
    #[pyo3(signature = (m, kernel, rank, alpha = 0.01, beta = 0.01, tau = 2.0, eta = 0.5, n_iter = 30, tol = 1e-6, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        m: usize,
        kernel: PyKernel,
        rank: usize,
        alpha: f64,
        beta: f64,
        tau: f64,
        eta: f64,
        n_iter: usize,
        tol: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let hp = OnlineHyperparams {
            r: rank,
            alpha,
            beta,
            tau,
            eta,
            n_iter,
            n_pass: 1,
            tol,
            seed,
        };
        Ok(PyOnlineModel {
            model: online::OnlineModel::new(m, &kernel.spec, &hp).map_err(to_py)?,
        })
    }

    /// Loads a checkpoint written by `save` or the command-line tool.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyOnlineModel {
            model: Checkpoint::load(&path).map_err(to_py)?.into_model(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::from_model(&self.model)
            .save(&path)
            .map_err(to_py)
    }

    /// Completes one column, then updates the dictionary. `x` holds starting values
    /// where `observed` is false.
    fn step(&mut self, x: Vec<f64>, observed: Vec<bool>) -> PyResult<Vec<f64>> {
        let fit = self.model.step(&x.into(), &observed).map_err(to_py)?;
        Ok(fit.x.iter().copied().collect())
    }

    /// Streams every column of `x` through the model `passes` times and returns the
    /// completed matrix. With `truth`, the running recovery error is tracked too.
    #[pyo3(signature = (x, mask, passes = 1, truth = None))]
    fn run(
        &mut self,
        py: Python<'_>,
        x: Rows,
        mask: MaskRows,
        passes: usize,
        truth: Option<Rows>,
    ) -> PyResult<Rows> {
        let values = matrix(&x)?;
        let mask = self::mask(&mask, values.shape())?;
        let truth = truth.as_ref().map(matrix).transpose()?;
        let mut model = self.model.clone();
        model.hp.n_pass = passes;
        let res = py.detach(|| online::run_stream_with(model, &values, &mask, truth.as_ref()));
        match res {
            Ok(res) => {
                self.model = res.model;
                Ok(rows(&res.completed))
            }
            Err(fail) => {
                self.model = *fail.model;
                Err(to_py(fail.error))
            }
        }
    }

    /// Completes new columns without changing the dictionary.
    #[pyo3(signature = (samples, mask, n_iter = None))]
    fn complete(
        &self,
        py: Python<'_>,
        samples: Rows,
        mask: MaskRows,
        n_iter: Option<usize>,
    ) -> PyResult<Rows> {
        let x = matrix(&samples)?;
        let mask = self::mask(&mask, x.shape())?;
        let hp = &self.model.hp;
        let params = OseParams {
            beta: hp.beta,
            tau: hp.tau,
            eta: hp.eta,
            n_iter: n_iter.unwrap_or(hp.n_iter),
            tol: hp.tol,
        };
        let d = &self.model.d;
        let spec = self.model.spec;
        let res = py
            .detach(|| ose::complete_new(d, &x, &mask, &spec, &params))
            .map_err(to_py)?;
        Ok(rows(&res.completed))
    }

    #[getter]
    fn dictionary(&self) -> Rows {
        rows(&self.model.d)
    }

    #[getter]
    fn samples_seen(&self) -> usize {
        self.model.samples_seen
    }

    /// Running mean cost after each sample.
    #[getter]
    fn cost_trace(&self) -> Vec<f64> {
        self.model.cost_trace.clone()
    }

    /// Running mean recovery error after each sample (only when `truth` was given).
    #[getter]
    fn error_trace(&self) -> Vec<f64> {
        self.model.err_trace.clone()
    }
}

/// Synthetic data from a named preset; returns `(x, labels)`.
///
/// Presets: `single-nonlinear`, `union-nonlinear`, `union-linear`.
#[pyfunction]
#[pyo3(signature = (preset, seed = 0))]
fn generate(preset: &str, seed: u64) -> PyResult<(Rows, Vec<usize>)> {
    let spec = match preset {
        "single-nonlinear" => SyntheticSpec::single_nonlinear(seed),
        "union-nonlinear" => SyntheticSpec::union_nonlinear(seed),
        "union-linear" => SyntheticSpec::union_linear(seed),
        other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
    };
    let (x, labels) = synth::generate(&spec).map_err(to_py)?;
    Ok((rows(&x), labels))
}

/// `n` points on the twisted cubic `(s, s^2, s^3)`.
#[pyfunction]
#[pyo3(signature = (n, seed = 0))]
fn twisted_cubic(n: usize, seed: u64) -> PyResult<Rows> {
    Ok(rows(&synth::twisted_cubic(n, seed).map_err(to_py)?))
}

/// Uniformly random mask with a fraction `rate` missing, or exactly
/// `per_column_missing` missing entries per column.
#[pyfunction]
#[pyo3(signature = (m, n, rate, seed = 0, per_column_missing = None))]
fn random_mask(
    m: usize,
    n: usize,
    rate: f64,
    seed: u64,
    per_column_missing: Option<usize>,
) -> PyResult<MaskRows> {
    Ok(mask_rows(
        &synth::random_mask(m, n, rate, seed, per_column_missing).map_err(to_py)?,
    ))
}

/// Minimum sampling rate for completion through the kernel features.
#[pyfunction]
#[pyo3(signature = (m, n, d, p, q = 2, u = 1))]
fn rho_kfmc(m: u64, n: u64, d: u64, p: u64, q: u64, u: u64) -> PyResult<f64> {
    let shape = ProblemShape::new(m, n, d, p, q, u).map_err(to_py)?;
    Ok(sampling::rho_kfmc(&shape).map_err(to_py)?.value)
}

/// Minimum sampling rate for plain low-rank completion.
#[pyfunction]
#[pyo3(signature = (m, n, d, p, u = 1))]
fn rho_lrmc(m: u64, n: u64, d: u64, p: u64, u: u64) -> PyResult<f64> {
    let shape = ProblemShape::new(m, n, d, p, 1, u).map_err(to_py)?;
    Ok(sampling::rho_lrmc(&shape).map_err(to_py)?.value)
}

/// Mean distance between columns over at most `max_pairs` sampled pairs.
#[pyfunction]
#[pyo3(signature = (x, max_pairs = 1000, seed = 0))]
fn mean_pair_distance(x: Rows, max_pairs: usize, seed: u64) -> PyResult<f64> {
    kernel::mean_pair_distance(&matrix(&x)?, max_pairs, seed).map_err(to_py)
}

/// `|x_hat - x| / |x|` in Frobenius norm.
#[pyfunction]
fn relative_error(x_hat: Rows, x: Rows) -> PyResult<f64> {
    metrics::relative_error(&matrix(&x_hat)?, &matrix(&x)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (x, tol = DEFAULT_RANK_TOL))]
fn numerical_rank(x: Rows, tol: f64) -> PyResult<usize> {
    Ok(metrics::numerical_rank(&matrix(&x)?, tol))
}

#[pymodule]
#[pyo3(name = "kfmc")]
fn kfmc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyCompletion>()?;
    m.add_class::<PyOnlineModel>()?;
    m.add_function(wrap_pyfunction!(complete, m)?)?;
    m.add_function(wrap_pyfunction!(lrf_complete, m)?)?;
    m.add_function(wrap_pyfunction!(complete_new, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(twisted_cubic, m)?)?;
    m.add_function(wrap_pyfunction!(random_mask, m)?)?;
    m.add_function(wrap_pyfunction!(rho_kfmc, m)?)?;
    m.add_function(wrap_pyfunction!(rho_lrmc, m)?)?;
    m.add_function(wrap_pyfunction!(mean_pair_distance, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    m.add_function(wrap_pyfunction!(numerical_rank, m)?)?;
    Ok(())
}

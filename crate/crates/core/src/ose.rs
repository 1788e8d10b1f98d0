//! Out-of-sample completion: new columns are completed against a frozen dictionary.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KfmcError, Result};
use crate::kernel::KernelSpec;
use crate::masked::{Mask, MaskedMatrix};
use crate::offline::{self, FitOptions, OfflineHyperparams, OfflineModel};
use crate::online::{BufferProbe, SampleFit, SampleSolver};

/// Fits a dictionary to fully observed data: the offline loop with `X` held fixed.
pub fn train_dictionary(
    x_train: &DMatrix<f64>,
    spec: &KernelSpec,
    hp: &OfflineHyperparams,
    d_init: Option<DMatrix<f64>>,
) -> Result<OfflineModel> {
    let data = MaskedMatrix::fully_observed(x_train)?;
    Ok(offline::fit_with(
        &data,
        spec,
        hp,
        &FitOptions {
            d_init,
            freeze_x: true,
        },
    )?)
}

/// Inner-loop settings for completing new samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OseParams {
    pub beta: f64,
    pub tau: f64,
    pub eta: f64,
    pub n_iter: usize,
    pub tol: f64,
}

impl Default for OseParams {
    fn default() -> Self {
        OseParams {
            beta: 0.01,
            tau: 2.0,
            eta: 0.5,
            n_iter: 30,
            tol: 1e-6,
        }
    }
}

impl OseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(KfmcError::arg(format!("tau must be > 1, got {}", self.tau)));
        }
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
        if self.n_iter < 1 {
            return Err(KfmcError::arg("n_iter must be >= 1"));
        }
        Ok(())
    }
}

/// Completed columns plus per-sample diagnostics.
#[derive(Debug, Clone)]
pub struct OseResult {
    pub completed: DMatrix<f64>,
    pub fits: Vec<SampleFit>,
    /// Largest working buffer (elements) used by any sample.
    pub peak_buffer: usize,
}

/// Completes each column of `samples` against the frozen dictionary `d`.
///
/// Missing entries start at the row means of `d`'s columns. Columns are processed in
/// parallel; each one's result does not depend on the others.
pub fn complete_new(
    d: &DMatrix<f64>,
    samples: &DMatrix<f64>,
    mask: &Mask,
    spec: &KernelSpec,
    params: &OseParams,
) -> Result<OseResult> {
    spec.validate()?;
    params.validate()?;
    let m = d.nrows();
    if samples.nrows() != m || mask.nrows() != m || mask.ncols() != samples.ncols() {
        return Err(KfmcError::arg(format!(
            "samples {:?} / mask {}x{} do not match dictionary rows {m}",
            samples.shape(),
            mask.nrows(),
            mask.ncols()
        )));
    }
    let probe = BufferProbe::default();
    let solver = SampleSolver::new(
        spec,
        d,
        params.beta,
        params.tau,
        params.eta,
        params.n_iter,
        params.tol,
        &probe,
    )?;
    let prior = DVector::from_iterator(m, d.row_iter().map(|r| r.mean()));
    let fits: Vec<SampleFit> = (0..samples.ncols())
        .into_par_iter()
        .map(|j| {
            let (_, missing) = mask.column_split(j);
            let mut x = samples.column(j).into_owned();
            for &i in &missing {
                x[i] = prior[i];
            }
            solver.complete(x, &missing)
        })
        .collect::<Result<_>>()?;
    let mut completed = DMatrix::zeros(m, samples.ncols());
    for (j, fit) in fits.iter().enumerate() {
        completed.set_column(j, &fit.x);
    }
    Ok(OseResult {
        completed,
        fits,
        peak_buffer: probe.peak(),
    })
}

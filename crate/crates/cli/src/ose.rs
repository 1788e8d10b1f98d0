use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use kfmc::baselines::{ose_lrf, svd_basis};
use kfmc::io::{self, Checkpoint};
use kfmc::ose::{complete_new, OseParams};
use kfmc::DMatrix;
use serde_json::json;

use crate::common::{
    num, prepare_out, usage, write_json, write_matrix, write_text, CliResult, Inputs, KernelKind,
    ReportBase,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Kernel completion against the saved dictionary.
    Kfmc,
    /// Projection onto the leading singular vectors of `--train`.
    OseLrf,
}

#[derive(Args, Debug)]
pub struct OseArgs {
    /// Saved dictionary; read only.
    #[arg(long)]
    pub model: PathBuf,
    /// New columns; NaN or empty cells are missing.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Expected kernel; a mismatch with the checkpoint is an input error.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelKind>,
    /// Inner iterations per column [default: the checkpoint's value].
    #[arg(long)]
    pub n_iter: Option<usize>,
    #[arg(long, value_enum, default_value_t = Baseline::Kfmc)]
    pub baseline: Baseline,
    /// Complete training matrix for the low-rank basis.
    #[arg(long, required_if_eq("baseline", "ose-lrf"))]
    pub train: Option<PathBuf>,
    /// Basis size for the low-rank baseline [default: numerical rank of the training data].
    #[arg(long)]
    pub lrf_rank: Option<usize>,
    /// Ridge weight for the low-rank baseline.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(a: &OseArgs) -> CliResult<()> {
    let started = Instant::now();
    let before = fs::read(&a.model).map_err(|e| usage(format!("{}: {e}", a.model.display())))?;
    let ckpt = Checkpoint::from_bytes(&before)
        .map_err(|e| usage(format!("{}: {e}", a.model.display())))?;
    let spec = ckpt.header.kernel;
    if a.kernel.is_some_and(|k| !k.matches(&spec)) {
        return Err(usage(format!("checkpoint holds a {} kernel", spec.name())));
    }
    let inputs = Inputs::load(&a.input, a.mask.as_deref(), a.truth.as_deref())?;
    let (m, n) = inputs.values.shape();
    if m != ckpt.header.m {
        return Err(usage(format!(
            "checkpoint expects {} rows, input has {m}",
            ckpt.header.m
        )));
    }
    let out = prepare_out(&a.out)?;
    let hp = ckpt.header.hyperparams;

    let (completed, iterations, extra, trace, method, hyper) = match a.baseline {
        Baseline::Kfmc => {
            let params = OseParams {
                beta: hp.beta,
                tau: hp.tau,
                eta: hp.eta,
                n_iter: a.n_iter.unwrap_or(hp.n_iter),
                tol: hp.tol,
            };
            let res = complete_new(&ckpt.d, &inputs.values, &inputs.mask, &spec, &params)?;
            let mut trace = String::from("column,iterations,objective,converged\n");
            for (j, f) in res.fits.iter().enumerate() {
                let obj = f.objective_trace.last().map_or(String::new(), |v| num(*v));
                trace.push_str(&format!(
                    "{j},{},{obj},{}\n",
                    f.iterations, f.converged as u8
                ));
            }
            let extra = json!({
                "converged_samples": res.fits.iter().filter(|f| f.converged).count(),
                "exhausted_samples": res.fits.iter().filter(|f| f.exhausted).count(),
                "peak_buffer": res.peak_buffer,
                "dictionary_atoms": ckpt.header.r,
            });
            let iterations = res.fits.iter().map(|f| f.iterations).sum();
            let hyper = json!({"beta": params.beta, "tau": params.tau, "eta": params.eta, "n_iter": params.n_iter, "tol": params.tol});
            (
                res.completed,
                iterations,
                extra,
                trace,
                format!("ose-kfmc-{}", spec.name()),
                hyper,
            )
        }
        Baseline::OseLrf => {
            let train_path = a.train.as_ref().expect("clap enforces --train");
            let (train, train_mask) = io::read_matrix_csv(train_path)?;
            if train_mask.missing_count() > 0 || train.nrows() != m {
                return Err(usage(
                    "--train must be complete with the same number of rows as the input",
                ));
            }
            let basis = svd_basis(&train, a.lrf_rank)?;
            let mut completed = DMatrix::zeros(m, n);
            for j in 0..n {
                let observed: Vec<bool> = (0..m).map(|i| inputs.mask.is_observed(i, j)).collect();
                let x = inputs
                    .values
                    .column(j)
                    .map(|v| if v.is_finite() { v } else { 0.0 });
                completed.set_column(j, &ose_lrf(&basis, &x, &observed, a.lambda)?);
            }
            let extra = json!({"basis_rank": basis.ncols()});
            let hyper = json!({"lambda": a.lambda, "lrf_rank": basis.ncols()});
            (
                completed,
                0,
                extra,
                String::from("column,iterations,objective,converged\n"),
                "ose-lrf".into(),
                hyper,
            )
        }
    };
    write_matrix(&out.join("completed.csv"), &completed)?;
    write_text(&out.join("trace.csv"), &trace)?;
    let after = fs::read(&a.model).map_err(|e| usage(format!("{}: {e}", a.model.display())))?;
    if after != before {
        return Err(usage("checkpoint changed during out-of-sample completion"));
    }
    let base = ReportBase {
        started,
        command: "ose",
        method,
        kernel: Some(spec),
        hyperparameters: hyper,
        shape: (m, n),
        observed_fraction: inputs.mask.observed_fraction(),
    };
    write_json(
        &out.join("report.json"),
        &base.finish(inputs.errors(&completed), iterations, extra, None),
    )
}

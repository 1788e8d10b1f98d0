//! Pieces shared by the subcommands: error mapping, input loading, kernel and
//! hyperparameter flags, and report files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use kfmc::kernel::mean_pair_distance;
use kfmc::metrics::{masked_relative_error, relative_error, ErrorScope};
use kfmc::{io, DMatrix, InitStrategy, KernelSpec, KfmcError, Mask, MaskedMatrix};
use serde_json::{json, Map, Value};

/// Pairs sampled for the RBF bandwidth heuristic.
pub const BANDWIDTH_PAIRS: usize = 1000;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl From<KfmcError> for CliError {
    fn from(e: KfmcError) -> Self {
        match e {
            KfmcError::Numerical(_) | KfmcError::Overflow(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

/// Data with its mask, plus the ground truth when one is available.
pub struct Inputs {
    pub values: DMatrix<f64>,
    pub mask: Mask,
    pub truth: Option<DMatrix<f64>>,
}

impl Inputs {
    /// Reads `data` (NaN or empty cells are missing) and an optional 0/1 mask.
    ///
    /// Without `--truth`, a fully numeric data file read together with a mask
    /// doubles as the ground truth.
    pub fn load(data: &Path, mask: Option<&Path>, truth: Option<&Path>) -> CliResult<Self> {
        let (values, own) =
            io::read_matrix_csv(data).map_err(|e| usage(format!("{}: {e}", data.display())))?;
        let (_, mask_all) =
            io::read_masked(data, mask).map_err(|e| usage(format!("reading mask: {e}")))?;
        let truth = match truth {
            Some(p) => {
                let (t, t_mask) =
                    io::read_matrix_csv(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                if t.shape() != values.shape() || t_mask.missing_count() > 0 {
                    return Err(usage(
                        "ground truth must be complete and the same shape as the data",
                    ));
                }
                Some(t)
            }
            None if mask.is_some() && own.missing_count() == 0 => Some(values.clone()),
            None => None,
        };
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(usage(format!("{} is empty", data.display())));
        }
        Ok(Inputs {
            values,
            mask: mask_all,
            truth,
        })
    }

    pub fn masked(&self) -> CliResult<MaskedMatrix> {
        Ok(MaskedMatrix::impute_init(
            &self.values,
            &self.mask,
            InitStrategy::RowMean,
        )?)
    }

    /// Relative errors of `completed` against the truth, over all entries and over missing ones.
    pub fn errors(&self, completed: &DMatrix<f64>) -> (Option<f64>, Option<f64>) {
        let Some(t) = &self.truth else {
            return (None, None);
        };
        let all = relative_error(completed, t).ok();
        let missing = masked_relative_error(completed, t, &self.mask, ErrorScope::MissingOnly).ok();
        (all, missing)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Poly,
    Rbf,
}

impl KernelKind {
    pub fn matches(self, spec: &KernelSpec) -> bool {
        spec.is_rbf() == (self == KernelKind::Rbf)
    }
}

#[derive(Args, Debug, Clone)]
pub struct KernelArgs {
    /// Polynomial offset.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Polynomial order.
    #[arg(long, default_value_t = 2)]
    pub q: u32,
    /// RBF bandwidth; overrides the multiplier heuristic.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// RBF bandwidth as a multiple of the mean pairwise column distance.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_mult: f64,
}

/// How the RBF bandwidth was chosen, for the report.
pub struct Bandwidth {
    pub mean_distance: Option<f64>,
}

impl KernelArgs {
    /// Builds the kernel; for RBF without `--sigma`, measures the mean pairwise
    /// distance on the row-mean-imputed data.
    pub fn build(
        &self,
        kind: KernelKind,
        data: &MaskedMatrix,
        seed: u64,
    ) -> CliResult<(KernelSpec, Bandwidth)> {
        match kind {
            KernelKind::Poly => Ok((
                KernelSpec::polynomial(self.c, self.q)?,
                Bandwidth {
                    mean_distance: None,
                },
            )),
            KernelKind::Rbf => match self.sigma {
                Some(s) => Ok((
                    KernelSpec::rbf(s)?,
                    Bandwidth {
                        mean_distance: None,
                    },
                )),
                None => {
                    let dbar = mean_pair_distance(data.x(), BANDWIDTH_PAIRS, seed)?;
                    Ok((
                        KernelSpec::rbf(self.sigma_mult * dbar)?,
                        Bandwidth {
                            mean_distance: Some(dbar),
                        },
                    ))
                }
            },
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// Dictionary size; defaults to the number of rows.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Dictionary penalty [default: 0.01].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Coefficient penalty [default: 0.01 for poly, 0.001 for rbf].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Newton relaxation.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Momentum.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Relative objective change that counts as converged.
    #[arg(long)]
    pub tol: Option<f64>,
}

pub struct Resolved {
    pub r: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub eta: f64,
    pub tol: f64,
}

impl SolverArgs {
    pub fn resolve(&self, kind: KernelKind, m: usize) -> Resolved {
        let default_beta = match kind {
            KernelKind::Poly => 0.01,
            KernelKind::Rbf => 1e-3,
        };
        Resolved {
            r: self.rank.unwrap_or(m),
            alpha: self.alpha.unwrap_or(0.01),
            beta: self.beta.unwrap_or(default_beta),
            tau: self.tau.unwrap_or(2.0),
            eta: self.eta.unwrap_or(0.5),
            tol: self.tol.unwrap_or(1e-6),
        }
    }

    pub fn any_set(&self) -> bool {
        self.rank.is_some()
            || self.alpha.is_some()
            || self.beta.is_some()
            || self.tau.is_some()
            || self.eta.is_some()
            || self.tol.is_some()
    }
}

pub fn prepare_out(dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

pub fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    io::write_json(path, value).map_err(|e| usage(format!("writing {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| usage(format!("writing {}: {e}", path.display())))
}

pub fn write_matrix(path: &Path, x: &DMatrix<f64>) -> CliResult<()> {
    io::write_matrix_csv(path, x, None)
        .map_err(|e| usage(format!("writing {}: {e}", path.display())))
}

/// Shortest round-trip text for a float; empty for non-finite values.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        String::new()
    }
}

/// Fields every report carries; command-specific ones are merged in.
pub struct ReportBase {
    pub started: Instant,
    pub command: &'static str,
    pub method: String,
    pub kernel: Option<KernelSpec>,
    pub hyperparameters: Value,
    pub shape: (usize, usize),
    pub observed_fraction: f64,
}

impl ReportBase {
    pub fn finish(
        self,
        errors: (Option<f64>, Option<f64>),
        iterations: usize,
        extra: Value,
        error: Option<String>,
    ) -> Value {
        let mut out = Map::new();
        out.insert("command".into(), json!(self.command));
        out.insert("method".into(), json!(self.method));
        out.insert("kernel".into(), json!(self.kernel));
        out.insert("hyperparameters".into(), self.hyperparameters);
        out.insert("shape".into(), json!([self.shape.0, self.shape.1]));
        out.insert("observed_fraction".into(), json!(self.observed_fraction));
        out.insert("relative_error".into(), json!(errors.0));
        out.insert("relative_error_missing".into(), json!(errors.1));
        out.insert("iterations".into(), json!(iterations));
        out.insert(
            "wall_time_s".into(),
            json!(self.started.elapsed().as_secs_f64()),
        );
        out.insert("error".into(), json!(error));
        if let Value::Object(extra) = extra {
            out.extend(extra);
        }
        Value::Object(out)
    }
}

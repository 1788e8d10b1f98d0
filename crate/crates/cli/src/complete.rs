use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use kfmc::baselines::lrf_complete;
use kfmc::io::Checkpoint;
use kfmc::offline::{self, OfflineHyperparams};
use kfmc::{OnlineHyperparams, OnlineModel};
use serde_json::json;

use crate::common::{
    num, prepare_out, write_json, write_matrix, write_text, CliError, CliResult, Inputs,
    KernelArgs, KernelKind, ReportBase, SolverArgs,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    KfmcPoly,
    KfmcRbf,
    Lrf,
}

#[derive(Args, Debug)]
pub struct CompleteArgs {
    /// CSV matrix; NaN or empty cells are missing.
    #[arg(long)]
    pub data: PathBuf,
    /// 0/1 CSV mask (1 = observed).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Complete ground truth for error reporting.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::KfmcRbf)]
    pub method: Method,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Outer iterations.
    #[arg(long, default_value_t = 500)]
    pub t_max: usize,
    /// Independent starts; the lowest final objective wins.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Inner iterations stored in the checkpoint for later out-of-sample use.
    #[arg(long, default_value_t = 30)]
    pub n_iter: usize,
    /// Ridge weight of the low-rank baseline.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    /// Alternating sweeps of the low-rank baseline.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn trace_csv(header: &str, trace: &[f64]) -> String {
    let mut s = format!("{header},objective\n");
    for (k, v) in trace.iter().enumerate() {
        s.push_str(&format!("{k},{}\n", num(*v)));
    }
    s
}

pub fn run(a: &CompleteArgs) -> CliResult<()> {
    let started = Instant::now();
    let inputs = Inputs::load(&a.data, a.mask.as_deref(), a.truth.as_deref())?;
    let mm = inputs.masked()?;
    let (m, n) = inputs.values.shape();
    let out = prepare_out(&a.out)?;

    if a.method == Method::Lrf {
        let rank = a.solver.rank.unwrap_or(m.min(n));
        let res = lrf_complete(&mm, rank, a.lambda, a.iters)?;
        write_matrix(&out.join("completed.csv"), &res.completed)?;
        write_text(
            &out.join("trace.csv"),
            &trace_csv("half_sweep", &res.objective_trace),
        )?;
        let base = ReportBase {
            started,
            command: "complete",
            method: "lrf".into(),
            kernel: None,
            hyperparameters: json!({"rank": rank, "lambda": a.lambda, "iters": a.iters}),
            shape: (m, n),
            observed_fraction: inputs.mask.observed_fraction(),
        };
        let extra = json!({"final_objective": res.objective_trace.last()});
        let report = base.finish(inputs.errors(&res.completed), a.iters, extra, None);
        return write_json(&out.join("report.json"), &report);
    }

    let kind = if a.method == Method::KfmcPoly {
        KernelKind::Poly
    } else {
        KernelKind::Rbf
    };
    let (spec, bandwidth) = a.kernel.build(kind, &mm, a.seed)?;
    let s = a.solver.resolve(kind, m);
    let hp = OfflineHyperparams {
        r: s.r,
        alpha: s.alpha,
        beta: s.beta,
        tau: s.tau,
        eta: s.eta,
        t_max: a.t_max,
        tol: s.tol,
        seed: a.seed,
    };
    hp.validate()?;
    if a.restarts == 0 {
        return Err(CliError::Input("--restarts must be >= 1".into()));
    }
    let mut hyper = json!(hp);
    hyper["restarts"] = json!(a.restarts);
    hyper["sigma_mult"] = json!(a.kernel.sigma.is_none().then_some(a.kernel.sigma_mult));
    hyper["mean_pair_distance"] = json!(bandwidth.mean_distance);
    let base = ReportBase {
        started,
        command: "complete",
        method: format!("kfmc-{}", spec.name()),
        kernel: Some(spec),
        hyperparameters: hyper,
        shape: (m, n),
        observed_fraction: inputs.mask.observed_fraction(),
    };

    let (model, failure) = match offline::fit_restarts(&mm, &spec, &hp, a.restarts) {
        Ok(model) => (model, None),
        Err(f) => (*f.model, Some(f.error)),
    };
    write_text(
        &out.join("trace.csv"),
        &trace_csv("iteration", &model.trace),
    )?;
    let extra = json!({
        "final_objective": model.trace.last(),
        "converged": model.converged,
        "rejected_steps": model.rejected_steps,
    });
    if let Some(error) = failure {
        let report = base.finish(
            (None, None),
            model.iterations,
            extra,
            Some(error.to_string()),
        );
        write_json(&out.join("report.json"), &report)?;
        return Err(error.into());
    }
    write_matrix(&out.join("completed.csv"), model.x())?;
    let online_hp = OnlineHyperparams {
        r: hp.r,
        alpha: hp.alpha,
        beta: hp.beta,
        tau: hp.tau,
        eta: hp.eta,
        n_iter: a.n_iter,
        n_pass: 1,
        tol: hp.tol,
        seed: hp.seed,
    };
    let dictionary = OnlineModel::from_dictionary(model.d.clone(), &spec, &online_hp);
    Checkpoint::from_model(&dictionary).save(&out.join("model.ckpt"))?;
    let report = base.finish(inputs.errors(model.x()), model.iterations, extra, None);
    write_json(&out.join("report.json"), &report)
}

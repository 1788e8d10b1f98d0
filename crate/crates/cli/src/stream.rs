use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use kfmc::io::Checkpoint;
use kfmc::online::{run_stream_with, OnlineModel};
use kfmc::ose::{complete_new, OseParams};
use kfmc::OnlineHyperparams;
use serde_json::json;

use crate::common::{
    num, prepare_out, usage, write_json, write_matrix, write_text, CliResult, Inputs, KernelArgs,
    KernelKind, ReportBase, SolverArgs,
};

#[derive(Args, Debug)]
pub struct StreamArgs {
    /// CSV matrix whose columns arrive in order; NaN or empty cells are missing.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Kernel for a fresh model; must agree with the checkpoint when resuming.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelKind>,
    #[command(flatten)]
    pub kernel_args: KernelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Passes over the stream. With `--resume`, 0 completes the columns without
    /// touching the dictionary.
    #[arg(long, default_value_t = 1)]
    pub passes: usize,
    /// Inner iterations per sample [default: 30, or the checkpoint's value].
    #[arg(long)]
    pub n_iter: Option<usize>,
    /// Continue from a saved dictionary; kernel and hyperparameters come from it.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn trace_csv(cost: &[f64], err: &[f64], n: usize) -> String {
    let mut s = String::from("step,pass,sample,g_t,e_t\n");
    for (k, g) in cost.iter().enumerate() {
        let e = err.get(k).map_or(String::new(), |v| num(*v));
        s.push_str(&format!(
            "{},{},{},{},{e}\n",
            k + 1,
            k / n + 1,
            k % n,
            num(*g)
        ));
    }
    s
}

fn load_model(a: &StreamArgs, inputs: &Inputs) -> CliResult<(OnlineModel, Option<f64>)> {
    let m = inputs.values.nrows();
    if let Some(path) = &a.resume {
        if a.solver.any_set() || a.kernel_args.sigma.is_some() {
            return Err(usage(
                "kernel and solver settings come from the checkpoint when resuming",
            ));
        }
        let ckpt = Checkpoint::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if a.kernel.is_some_and(|k| !k.matches(&ckpt.header.kernel)) {
            return Err(usage(format!(
                "checkpoint holds a {} kernel",
                ckpt.header.kernel.name()
            )));
        }
        if ckpt.header.m != m {
            return Err(usage(format!(
                "checkpoint expects {} rows, data has {m}",
                ckpt.header.m
            )));
        }
        let mut model = ckpt.into_model();
        if let Some(k) = a.n_iter {
            model.hp.n_iter = k;
        }
        return Ok((model, None));
    }
    let kind = a
        .kernel
        .ok_or_else(|| usage("--kernel is required without --resume"))?;
    if a.passes == 0 {
        return Err(usage("--passes 0 only makes sense with --resume"));
    }
    let (spec, bandwidth) = a.kernel_args.build(kind, &inputs.masked()?, a.seed)?;
    let s = a.solver.resolve(kind, m);
    let hp = OnlineHyperparams {
        r: s.r,
        alpha: s.alpha,
        beta: s.beta,
        tau: s.tau,
        eta: s.eta,
        n_iter: a.n_iter.unwrap_or(30),
        n_pass: a.passes,
        tol: s.tol,
        seed: a.seed,
    };
    Ok((OnlineModel::new(m, &spec, &hp)?, bandwidth.mean_distance))
}

pub fn run(a: &StreamArgs) -> CliResult<()> {
    let started = Instant::now();
    let inputs = Inputs::load(&a.data, a.mask.as_deref(), a.truth.as_deref())?;
    let (m, n) = inputs.values.shape();
    let (mut model, mean_distance) = load_model(a, &inputs)?;
    let out = prepare_out(&a.out)?;
    let mut hyper = json!(model.hp);
    hyper["n_pass"] = json!(a.passes);
    hyper["mean_pair_distance"] = json!(mean_distance);
    hyper["resumed_from_samples"] = json!(a.resume.as_ref().map(|_| model.samples_seen));
    let base = ReportBase {
        started,
        command: "stream",
        method: format!("kfmc-{}", model.spec.name()),
        kernel: Some(model.spec),
        hyperparameters: hyper,
        shape: (m, n),
        observed_fraction: inputs.mask.observed_fraction(),
    };

    if a.passes == 0 {
        // Inference only; the saved dictionary is passed through byte for byte.
        let hp = model.hp;
        let params = OseParams {
            beta: hp.beta,
            tau: hp.tau,
            eta: hp.eta,
            n_iter: hp.n_iter,
            tol: hp.tol,
        };
        let res = complete_new(&model.d, &inputs.values, &inputs.mask, &model.spec, &params)?;
        let src = a.resume.as_ref().expect("checked in load_model");
        let dst = out.join("model.ckpt");
        if fs::canonicalize(src).ok() != fs::canonicalize(&dst).ok() {
            fs::copy(src, &dst).map_err(|e| usage(format!("copying checkpoint: {e}")))?;
        }
        write_matrix(&out.join("completed.csv"), &res.completed)?;
        write_text(&out.join("trace.csv"), &trace_csv(&[], &[], n))?;
        let iterations = res.fits.iter().map(|f| f.iterations).sum();
        let extra = json!({"samples_seen": model.samples_seen, "peak_buffer": res.peak_buffer});
        return write_json(
            &out.join("report.json"),
            &base.finish(inputs.errors(&res.completed), iterations, extra, None),
        );
    }

    model.hp.n_pass = a.passes;
    model.hp.validate()?;
    match run_stream_with(model, &inputs.values, &inputs.mask, inputs.truth.as_ref()) {
        Ok(res) => {
            write_matrix(&out.join("completed.csv"), &res.completed)?;
            write_text(
                &out.join("trace.csv"),
                &trace_csv(&res.model.cost_trace, &res.model.err_trace, n),
            )?;
            Checkpoint::from_model(&res.model).save(&out.join("model.ckpt"))?;
            let extra = json!({
                "pass_costs": res.pass_costs,
                "pass_errors": res.pass_errors,
                "final_cost": res.pass_costs.last(),
                "final_error": res.pass_errors.last(),
                "converged_samples": res.converged_samples,
                "exhausted_samples": res.exhausted_samples,
                "samples_seen": res.model.samples_seen,
                "peak_buffer": res.model.peak_buffer,
            });
            let steps = res.model.cost_trace.len();
            write_json(
                &out.join("report.json"),
                &base.finish(inputs.errors(&res.completed), steps, extra, None),
            )
        }
        Err(f) => {
            write_text(
                &out.join("trace.csv"),
                &trace_csv(&f.model.cost_trace, &f.model.err_trace, n),
            )?;
            let extra =
                json!({"samples_seen": f.model.samples_seen, "peak_buffer": f.model.peak_buffer});
            let steps = f.model.cost_trace.len();
            write_json(
                &out.join("report.json"),
                &base.finish((None, None), steps, extra, Some(f.error.to_string())),
            )?;
            Err(f.error.into())
        }
    }
}

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use kfmc::sampling::{self, ProblemShape, RateBound};
use serde_json::{json, Value};

use crate::common::{write_json, CliResult};

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[arg(long)]
    pub m: u64,
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub d: u64,
    #[arg(long)]
    pub p: u64,
    /// Kernel polynomial order.
    #[arg(long, default_value_t = 2)]
    pub q: u64,
    /// Number of subspaces.
    #[arg(long, default_value_t = 1)]
    pub u: u64,
    /// Also report observed degrees of freedom per column at this sampling rate.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Also report the RBF truncation error scale for this bound on |x'y| / sigma^2.
    #[arg(long)]
    pub c_bound: Option<f64>,
    /// Write the JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// JSON number when it fits, decimal string otherwise.
fn big(v: u128) -> Value {
    u64::try_from(v).map_or_else(|_| json!(v.to_string()), |v| json!(v))
}

fn detail(b: &RateBound) -> Value {
    json!({"value": b.value, "unclamped": b.unclamped, "vacuous": b.vacuous})
}

pub fn run(a: &BoundsArgs) -> CliResult<()> {
    let shape = ProblemShape::new(a.m, a.n, a.d, a.p, a.q, a.u)?;
    let kfmc = sampling::rho_kfmc(&shape)?;
    let lrmc = sampling::rho_lrmc(&shape)?;
    let mut out = json!({
        "shape": {"m": a.m, "n": a.n, "d": a.d, "p": a.p, "q": a.q, "u": a.u},
        "rho_kfmc": kfmc.value,
        "rho_lrmc": lrmc.value,
        "kfmc": detail(&kfmc),
        "lrmc": detail(&lrmc),
        "expected_rank_x": big(sampling::expected_rank_x(&shape)?),
        "expected_rank_phi": big(sampling::expected_rank_phi(&shape)?),
        "feature_dim": big(shape.feature_dim()?),
        "feature_rank": big(shape.feature_rank()?),
    });
    if let Some(rate) = a.rate {
        out["dof_observed_per_column"] = json!(sampling::dof_observed_per_column(rate, a.m, a.q)?);
    }
    if let Some(c) = a.c_bound {
        out["rbf_truncation_error"] = json!(sampling::rbf_poly_truncation_error(c, a.q as u32)?);
    }
    let text = serde_json::to_string_pretty(&out).expect("json values serialize");
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    if let Some(p) = &a.out {
        write_json(p, &out)?;
    }
    Ok(())
}

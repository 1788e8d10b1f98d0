use std::path::PathBuf;

use clap::{Args, ValueEnum};
use kfmc::metrics::{numerical_rank, DEFAULT_RANK_TOL};
use kfmc::synth::{self, SyntheticSpec};
use kfmc::{io, Mask};
use serde_json::json;

use crate::common::{prepare_out, usage, write_json, write_text, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    SingleNonlinear,
    UnionNonlinear,
    UnionLinear,
    TwistedCubic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Pattern {
    Random,
    Continuous,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, conflicts_with_all = ["d", "p", "u", "m", "n_per"])]
    pub preset: Option<Preset>,
    /// Latent dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Polynomial degree of the generating maps.
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of subspaces.
    #[arg(long)]
    pub u: Option<usize>,
    /// Ambient dimension (rows).
    #[arg(long)]
    pub m: Option<usize>,
    /// Columns per subspace.
    #[arg(long)]
    pub n_per: Option<usize>,
    /// Columns of the twisted cubic.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Include the constant monomial in the generating maps.
    #[arg(long)]
    pub include_constant: bool,
    /// Fraction of entries to remove.
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
    /// Remove exactly this many entries from every column instead.
    #[arg(long, conflicts_with = "missing")]
    pub per_column_missing: Option<usize>,
    #[arg(long, value_enum, default_value_t = Pattern::Random)]
    pub pattern: Pattern,
    /// Runs per column for the continuous pattern.
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mask seed [default: seed + 1].
    #[arg(long)]
    pub mask_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(a: &GenArgs) -> CliResult<()> {
    let (x, labels, generator, expected_rank) = match a.preset {
        Some(Preset::TwistedCubic) => {
            let x = synth::twisted_cubic(a.n, a.seed)?;
            (
                x,
                vec![0; a.n],
                json!({"kind": "twisted_cubic", "n": a.n}),
                3usize,
            )
        }
        preset => {
            let spec = match preset {
                Some(Preset::SingleNonlinear) => SyntheticSpec::single_nonlinear(a.seed),
                Some(Preset::UnionNonlinear) => SyntheticSpec::union_nonlinear(a.seed),
                Some(Preset::UnionLinear) => SyntheticSpec::union_linear(a.seed),
                _ => {
                    let (Some(d), Some(p), Some(u)) = (a.d, a.p, a.u) else {
                        return Err(usage("give --preset, or all of --d, --p and --u"));
                    };
                    SyntheticSpec::new(d, p, u, a.m.unwrap_or(30), a.n_per.unwrap_or(100), a.seed)
                }
            };
            let spec = SyntheticSpec {
                include_constant: a.include_constant || spec.include_constant,
                ..spec
            };
            let (x, labels) = synth::generate(&spec)?;
            let generator = json!({
                "kind": "polynomial_maps",
                "d": spec.d, "p": spec.p, "u": spec.u, "m": spec.m, "n_per": spec.n_per,
                "include_constant": spec.include_constant,
            });
            (x, labels, generator, spec.expected_rank())
        }
    };
    let (m, n) = x.shape();
    let mask_seed = a.mask_seed.unwrap_or(a.seed.wrapping_add(1));
    let mask = match (a.per_column_missing, a.pattern) {
        (Some(_), Pattern::Continuous) => {
            return Err(usage("--per-column-missing needs the random pattern"))
        }
        (Some(k), Pattern::Random) => synth::random_mask(m, n, 0.0, mask_seed, Some(k))?,
        (None, Pattern::Random) if a.sequences.is_some() => {
            return Err(usage("--sequences applies to the continuous pattern"))
        }
        (None, Pattern::Random) if a.missing == 0.0 => Mask::full(m, n),
        (None, Pattern::Random) => synth::random_mask(m, n, a.missing, mask_seed, None)?,
        (None, Pattern::Continuous) => {
            let seqs = a
                .sequences
                .ok_or_else(|| usage("the continuous pattern needs --sequences"))?;
            synth::continuous_mask(m, n, a.missing, seqs, mask_seed)?
        }
    };
    let out = prepare_out(&a.out)?;
    io::write_matrix_csv(&out.join("data.csv"), &x, None)?;
    io::write_mask_csv(&out.join("mask.csv"), &mask)?;
    let manifest = json!({
        "generator": generator,
        "preset": a.preset.map(|p| p.to_possible_value().map(|v| v.get_name().to_owned())),
        "seed": a.seed,
        "shape": [m, n],
        "true_rank": expected_rank,
        "numerical_rank": numerical_rank(&x, DEFAULT_RANK_TOL),
        "mask": {
            "pattern": a.pattern.to_possible_value().map(|v| v.get_name().to_owned()),
            "rate": a.missing,
            "per_column_missing": a.per_column_missing,
            "sequences": a.sequences,
            "seed": mask_seed,
            "missing_count": mask.missing_count(),
        },
        "files": {"data": "data.csv", "mask": "mask.csv", "labels": "labels.csv"},
    });
    let labels: String = labels.iter().map(|l| format!("{l}\n")).collect();
    write_text(&out.join("labels.csv"), &format!("subspace\n{labels}"))?;
    write_json(&out.join("manifest.json"), &manifest)
}

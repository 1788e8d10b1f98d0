//! Acceptance run: one line per criterion, then a single assertion over all of
//! them. Criteria run in sequence so the timing measurements are not disturbed.
//!
//! `cargo test -p kfmc-cli --test acceptance -- --nocapture` shows the lines.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use kfmc::kernel::mean_pair_distance;
use kfmc::metrics::{numerical_rank, DEFAULT_RANK_TOL};
use kfmc::ose::{complete_new, OseParams};
use kfmc::sampling::{self, ProblemShape};
use kfmc::synth::{self, SyntheticSpec};
use kfmc::KernelSpec;
use serde_json::Value;
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn kfmc(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_kfmc"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "kfmc {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn report(dir: &Path) -> Result<Value, String> {
    let bytes = fs::read(dir.join("report.json")).map_err(|e| e.to_string())?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

fn field(v: &Value, key: &str) -> Result<f64, String> {
    v[key]
        .as_f64()
        .ok_or_else(|| format!("report has no numeric {key}"))
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Completion with the given flags; returns the report's relative error.
fn complete_re(gen: &Path, out: &Path, flags: &[&str]) -> Result<f64, String> {
    let data = gen.join("data.csv");
    let mask = gen.join("mask.csv");
    let mut args = vec![
        "complete",
        "--data",
        s(&data),
        "--mask",
        s(&mask),
        "--out",
        s(out),
    ];
    args.extend_from_slice(flags);
    kfmc(&args)?;
    field(&report(out)?, "relative_error")
}

fn ranks() -> Outcome {
    type Preset = fn(u64) -> SyntheticSpec;
    let presets: [(Preset, usize); 3] = [
        (SyntheticSpec::single_nonlinear, 19),
        (SyntheticSpec::union_nonlinear, 30),
        (SyntheticSpec::union_linear, 30),
    ];
    for (make, expect) in presets {
        for seed in 0..20 {
            let (x, _) = synth::generate(&make(seed)).expect("preset generates");
            let rank = numerical_rank(&x, DEFAULT_RANK_TOL);
            if rank != expect {
                return outcome(
                    false,
                    format!(
                        "{:?} seed {seed}: rank {rank}, expected {expect}",
                        make(seed)
                    ),
                );
            }
        }
    }
    let shape = ProblemShape::new(20, 200, 2, 4, 2, 1).unwrap();
    let rx = sampling::expected_rank_x(&shape).unwrap() as f64 / 20.0;
    let rphi = sampling::expected_rank_phi(&shape).unwrap() as f64 / 200.0;
    outcome(
        rx == 0.75 && rphi == 0.225,
        format!("ranks 19/30/30 on 20 seeds each; ratios {rx} and {rphi}"),
    )
}

fn bounds(tmp: &Path) -> Result<Outcome, String> {
    let read = |name: &str, args: &[&str]| -> Result<Value, String> {
        let out = tmp.join(name);
        let mut full = vec![
            "bounds",
            "--m",
            "20",
            "--n",
            "300",
            "--d",
            "2",
            "--q",
            "2",
            "--out",
            s(&out),
        ];
        full.extend_from_slice(args);
        kfmc(&full)?;
        serde_json::from_slice(&fs::read(&out).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())
    };
    let a = read("a.json", &["--p", "2", "--u", "3"])?;
    let b = read("b.json", &["--p", "1", "--u", "10"])?;
    let (ka, la) = (field(&a, "rho_kfmc")?, field(&a, "rho_lrmc")?);
    let (kb, lb) = (field(&b, "rho_kfmc")?, field(&b, "rho_lrmc")?);
    let pass = (ka - 0.562).abs() <= 0.005
        && (kb - 0.639).abs() <= 0.005
        && (la - 0.906).abs() <= 0.005
        && (lb - 1.0).abs() <= 0.005;
    Ok(outcome(
        pass,
        format!("rho_kfmc {ka:.4} / {kb:.4}, rho_lrmc {la:.4} / {lb:.4}"),
    ))
}

fn twisted_cubic(tmp: &Path) -> Result<Outcome, String> {
    let one = tmp.join("tc1");
    let two = tmp.join("tc2");
    kfmc(&[
        "gen",
        "--preset",
        "twisted-cubic",
        "--per-column-missing",
        "1",
        "--seed",
        "0",
        "--out",
        s(&one),
    ])?;
    kfmc(&[
        "gen",
        "--preset",
        "twisted-cubic",
        "--per-column-missing",
        "2",
        "--seed",
        "0",
        "--out",
        s(&two),
    ])?;
    let protocol = [
        "--method",
        "kfmc-rbf",
        "--rank",
        "12",
        "--sigma-mult",
        "1.25",
        "--beta",
        "1e-4",
        "--t-max",
        "3000",
        "--restarts",
        "20",
    ];
    let k1 = complete_re(&one, &tmp.join("tc1-kfmc"), &protocol)?;
    let k2 = complete_re(&two, &tmp.join("tc2-kfmc"), &protocol)?;
    let mut lrf = f64::INFINITY;
    for rank in ["1", "2"] {
        let re = complete_re(
            &one,
            &tmp.join(format!("tc1-lrf{rank}")),
            &["--method", "lrf", "--rank", rank],
        )?;
        lrf = lrf.min(re);
    }
    let pass = k1 < 0.05 && lrf > 0.3 && k2 > 0.3;
    Ok(outcome(pass, format!("KFMC-RBF RE {k1:.4} (< 0.05), LRF RE {lrf:.4} (> 0.3), 2 missing/column RE {k2:.4} (> 0.3)")))
}

/// Best low-rank RE over the tuning grid on the union-of-subspaces data.
fn lrf_best(gen: &Path, tmp: &Path) -> Result<f64, String> {
    let mut best = f64::INFINITY;
    for rank in ["5", "10", "19", "30"] {
        let re = complete_re(
            gen,
            &tmp.join(format!("lrf{rank}")),
            &["--method", "lrf", "--rank", rank],
        )?;
        best = best.min(re);
    }
    Ok(best)
}

fn high_rank_contrast(tmp: &Path, union: &Path) -> Result<(Outcome, f64), String> {
    let mut best = (f64::INFINITY, String::new());
    for rank in ["15", "30", "60"] {
        for mult in ["0.5", "1", "3"] {
            for beta in ["1e-3", "1e-4"] {
                let out = tmp.join(format!("rbf-{rank}-{mult}-{beta}"));
                let flags = [
                    "--method",
                    "kfmc-rbf",
                    "--rank",
                    rank,
                    "--sigma-mult",
                    mult,
                    "--beta",
                    beta,
                ];
                let re = complete_re(union, &out, &flags)?;
                if re < best.0 {
                    best = (re, format!("rbf r={rank} sigma={mult}x beta={beta}"));
                }
            }
        }
        for alpha in ["0.01", "0.1"] {
            for beta in ["0.01", "0.1"] {
                let out = tmp.join(format!("poly-{rank}-{alpha}-{beta}"));
                let flags = [
                    "--method",
                    "kfmc-poly",
                    "--rank",
                    rank,
                    "--alpha",
                    alpha,
                    "--beta",
                    beta,
                ];
                let re = complete_re(union, &out, &flags)?;
                if re < best.0 {
                    best = (re, format!("poly r={rank} alpha={alpha} beta={beta}"));
                }
            }
        }
    }
    let lrf = lrf_best(union, tmp)?;
    let detail = format!(
        "best KFMC RE {:.4} ({}), best LRF RE {lrf:.4}, ratio {:.3} (< 0.5)",
        best.0,
        best.1,
        best.0 / lrf
    );
    Ok((outcome(best.0 < 0.5 * lrf, detail), lrf))
}

fn online(tmp: &Path, union: &Path, lrf: f64) -> Result<Outcome, String> {
    let data = union.join("data.csv");
    let mask = union.join("mask.csv");
    let run = |passes: &str| -> Result<Value, String> {
        let out = tmp.join(format!("stream{passes}"));
        kfmc(&[
            "stream",
            "--data",
            s(&data),
            "--mask",
            s(&mask),
            "--kernel",
            "rbf",
            "--rank",
            "30",
            "--passes",
            passes,
            "--out",
            s(&out),
        ])?;
        report(&out)
    };
    let one = run("1")?;
    let ten = run("10")?;
    let (e1, e10) = (field(&one, "final_error")?, field(&ten, "final_error")?);
    let re = field(&ten, "relative_error")?;
    let (m, r) = (30.0, 30.0);
    let limit = 2.0 * (m * r + r * r);
    let peak = field(&ten, "peak_buffer")?.max(field(&one, "peak_buffer")?);
    let pass = e10 <= e1 && re < lrf && peak <= limit;
    Ok(outcome(
        pass,
        format!("e_t 1 pass {e1:.4}, 10 passes {e10:.4}; RE {re:.4} vs LRF {lrf:.4}; peak buffer {peak} <= {limit}"),
    ))
}

/// Time per inner iteration per column of out-of-sample completion, best of three.
fn ose_iteration_time(m: usize, r: usize) -> f64 {
    let (x, _) = synth::generate(&SyntheticSpec::new(3, 2, 1, m, 150, 11)).unwrap();
    let d = x.columns(0, r).into_owned();
    let samples = x.columns(r, 100).into_owned();
    let mask = synth::random_mask(m, 100, 0.3, 12, None).unwrap();
    let spec = KernelSpec::rbf(mean_pair_distance(&x, 1000, 0).unwrap()).unwrap();
    let params = OseParams {
        n_iter: 20,
        tol: 0.0,
        ..OseParams::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    (0..3)
        .map(|_| {
            let start = Instant::now();
            let res = pool
                .install(|| complete_new(&d, &samples, &mask, &spec, &params))
                .unwrap();
            let iters: usize = res.fits.iter().map(|f| f.iterations.max(1)).sum();
            start.elapsed().as_secs_f64() / iters as f64
        })
        .fold(f64::INFINITY, f64::min)
}

fn out_of_sample(tmp: &Path, union: &Path) -> Result<Outcome, String> {
    let data = union.join("data.csv");
    let train = tmp.join("ose-train");
    kfmc(&[
        "complete",
        "--data",
        s(&data),
        "--method",
        "kfmc-rbf",
        "--rank",
        "30",
        "--t-max",
        "100",
        "--out",
        s(&train),
    ])?;
    let ckpt = train.join("model.ckpt");
    let before = fs::read(&ckpt).map_err(|e| e.to_string())?;
    let mask = union.join("mask.csv");
    kfmc(&[
        "ose",
        "--model",
        s(&ckpt),
        "--input",
        s(&data),
        "--mask",
        s(&mask),
        "--out",
        s(&tmp.join("ose")),
    ])?;
    let unchanged = before == fs::read(&ckpt).map_err(|e| e.to_string())?;

    let grid = [(400, 10), (400, 20), (800, 10), (800, 20)];
    let times: Vec<f64> = grid
        .iter()
        .map(|&(m, r)| ose_iteration_time(m, r))
        .collect();
    let per_unit: Vec<f64> = grid
        .iter()
        .zip(&times)
        .map(|(&(m, r), t)| t / (m * r) as f64)
        .collect();
    let centre = (per_unit.iter().map(|v| v.ln()).sum::<f64>() / per_unit.len() as f64).exp();
    let spread: Vec<f64> = per_unit.iter().map(|v| v / centre - 1.0).collect();
    let linear = spread.iter().all(|d| d.abs() <= 0.3);
    let cells: Vec<String> = grid
        .iter()
        .zip(&times)
        .zip(&spread)
        .map(|((&(m, r), t), d)| format!("m={m},r={r}: {:.2}us ({:+.0}%)", t * 1e6, d * 100.0))
        .collect();
    Ok(outcome(
        unchanged && linear,
        format!(
            "checkpoint unchanged: {unchanged}; time per column-iteration {}",
            cells.join(", ")
        ),
    ))
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let mut bytes = fs::read(&path).unwrap();
            if path.file_name().is_some_and(|n| n == "report.json") {
                // wall time is the one field expected to differ
                let mut v: Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("wall_time_s");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), bytes);
        }
    }
    files
}

fn determinism(tmp: &Path) -> Result<Outcome, String> {
    let run = |root: &Path| -> Result<(), String> {
        let g = root.join("gen");
        kfmc(&[
            "gen",
            "--preset",
            "union-nonlinear",
            "--missing",
            "0.3",
            "--seed",
            "5",
            "--out",
            s(&g),
        ])?;
        let data = g.join("data.csv");
        let mask = g.join("mask.csv");
        let (data, mask) = (s(&data), s(&mask));
        let c = root.join("complete");
        kfmc(&[
            "complete",
            "--data",
            data,
            "--mask",
            mask,
            "--rank",
            "20",
            "--t-max",
            "40",
            "--restarts",
            "2",
            "--seed",
            "3",
            "--out",
            s(&c),
        ])?;
        kfmc(&[
            "complete",
            "--data",
            data,
            "--mask",
            mask,
            "--method",
            "lrf",
            "--rank",
            "10",
            "--out",
            s(&root.join("lrf")),
        ])?;
        let st = root.join("stream");
        kfmc(&[
            "stream",
            "--data",
            data,
            "--mask",
            mask,
            "--kernel",
            "poly",
            "--rank",
            "20",
            "--passes",
            "2",
            "--seed",
            "4",
            "--out",
            s(&st),
        ])?;
        let ckpt = st.join("model.ckpt");
        kfmc(&[
            "stream",
            "--data",
            data,
            "--mask",
            mask,
            "--resume",
            s(&ckpt),
            "--passes",
            "0",
            "--out",
            s(&root.join("resume")),
        ])?;
        kfmc(&[
            "ose",
            "--model",
            s(&c.join("model.ckpt")),
            "--input",
            data,
            "--mask",
            mask,
            "--out",
            s(&root.join("ose")),
        ])?;
        kfmc(&[
            "bounds",
            "--m",
            "30",
            "--n",
            "300",
            "--d",
            "3",
            "--p",
            "3",
            "--u",
            "3",
            "--out",
            s(&root.join("bounds.json")),
        ])
    };
    let (a, b) = (tmp.join("det-a"), tmp.join("det-b"));
    run(&a)?;
    run(&b)?;
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    let differing: Vec<String> = sa
        .keys()
        .chain(sb.keys())
        .filter(|k| sa.get(*k) != sb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    Ok(outcome(
        differing.is_empty(),
        format!(
            "{} files compared across two runs; differing: {differing:?}",
            sa.len()
        ),
    ))
}

fn optimization_invariants() -> Outcome {
    use common::checks;
    let results = [
        (
            "RBF gradients",
            checks::gradients_match_finite_differences(true, 50),
        ),
        (
            "polynomial gradients",
            checks::gradients_match_finite_differences(false, 50),
        ),
        (
            "momentum-free monotone traces",
            checks::momentum_free_traces_are_monotone(20),
        ),
        (
            "batch sufficient decrease",
            checks::batch_sufficient_decrease(100),
        ),
        (
            "online sufficient decrease",
            checks::online_sufficient_decrease(100),
        ),
    ];
    let failed: Vec<String> = results
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    if failed.is_empty() {
        outcome(true, "gradients within 1e-5 of finite differences, traces monotone, decrease bounds hold on 100 + 100 instances")
    } else {
        outcome(false, failed.join("; "))
    }
}

#[test]
fn acceptance() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    let mut lines = Vec::new();
    let mut record =
        |id: u32, name: &str, limit: Duration, run: &mut dyn FnMut() -> Result<Outcome, String>| {
            let start = Instant::now();
            let res = run().unwrap_or_else(|e| outcome(false, e));
            let elapsed = start.elapsed();
            let pass = res.pass && elapsed <= limit;
            let line = format!(
                "criterion {id} {name}: {} | {} | {:.1}s (limit {}s)",
                if pass { "PASS" } else { "FAIL" },
                res.detail,
                elapsed.as_secs_f64(),
                limit.as_secs()
            );
            println!("{line}");
            lines.push((pass, line));
        };

    let union = t.join("union");
    kfmc(&[
        "gen",
        "--preset",
        "union-nonlinear",
        "--missing",
        "0.3",
        "--seed",
        "1",
        "--out",
        s(&union),
    ])
    .unwrap();
    let mut lrf = f64::NAN;

    record(1, "rank predictions", Duration::from_secs(10), &mut || {
        Ok(ranks())
    });
    record(2, "sampling bounds", Duration::from_secs(5), &mut || {
        bounds(t)
    });
    record(3, "twisted cubic", Duration::from_secs(60), &mut || {
        twisted_cubic(t)
    });
    record(
        4,
        "high-rank vs low-rank",
        Duration::from_secs(300),
        &mut || {
            let (o, best_lrf) = high_rank_contrast(t, &union)?;
            lrf = best_lrf;
            Ok(o)
        },
    );
    record(
        5,
        "optimization invariants",
        Duration::from_secs(60),
        &mut || Ok(optimization_invariants()),
    );
    record(6, "online behavior", Duration::from_secs(300), &mut || {
        let best = if lrf.is_finite() {
            lrf
        } else {
            lrf_best(&union, t)?
        };
        online(t, &union, best)
    });
    record(
        7,
        "out-of-sample extension",
        Duration::from_secs(120),
        &mut || out_of_sample(t, &union),
    );
    record(8, "determinism", Duration::from_secs(300), &mut || {
        determinism(t)
    });

    let failed: Vec<&String> = lines.iter().filter(|(p, _)| !p).map(|(_, l)| l).collect();
    assert!(
        failed.is_empty(),
        "failing criteria:\n{}",
        failed
            .iter()
            .map(|l| l.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    );
}

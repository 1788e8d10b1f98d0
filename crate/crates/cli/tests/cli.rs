//! End-to-end runs of the `kfmc` binary: files written, exit codes, and the
//! checkpoint round trips.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn kfmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kfmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = kfmc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    kfmc(args).status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn p(dir: &TempDir, rel: &str) -> String {
    dir.path().join(rel).to_str().unwrap().to_owned()
}

#[test]
fn bounds_reproduce_the_worked_examples() {
    let out = ok(&[
        "bounds", "--m", "20", "--d", "2", "--p", "2", "--u", "3", "--q", "2", "--n", "300",
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["rho_kfmc"].as_f64().unwrap() - 0.5618).abs() < 5e-4);
    assert!((v["rho_lrmc"].as_f64().unwrap() - 0.906).abs() < 5e-4);
    assert_eq!(v["lrmc"]["vacuous"], false);

    let out = ok(&[
        "bounds", "--m", "20", "--d", "2", "--p", "1", "--u", "10", "--n", "300",
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["rho_kfmc"].as_f64().unwrap() - 0.6386).abs() < 5e-4);
    assert_eq!(v["rho_lrmc"].as_f64().unwrap(), 1.0);
    assert_eq!(v["lrmc"]["vacuous"], true);
}

#[test]
fn gen_writes_the_dataset_and_manifest() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "gen",
        "--preset",
        "union-nonlinear",
        "--missing",
        "0.3",
        "--seed",
        "7",
        "--out",
        &p(&dir, "u"),
    ]);
    let m = json(&dir.path().join("u/manifest.json"));
    assert_eq!(m["shape"], serde_json::json!([30, 300]));
    assert_eq!(m["true_rank"], 30);
    assert_eq!(m["numerical_rank"], 30);
    assert_eq!(m["mask"]["missing_count"], 2700);
    let mask = fs::read_to_string(dir.path().join("u/mask.csv")).unwrap();
    assert_eq!(mask.lines().count(), 30);
    assert_eq!(mask.matches('0').count(), 2700);

    ok(&[
        "gen",
        "--preset",
        "union-linear",
        "--seed",
        "3",
        "--out",
        &p(&dir, "a"),
    ]);
    ok(&[
        "gen",
        "--d",
        "3",
        "--p",
        "1",
        "--u",
        "10",
        "--seed",
        "3",
        "--out",
        &p(&dir, "b"),
    ]);
    assert_eq!(
        fs::read(dir.path().join("a/data.csv")).unwrap(),
        fs::read(dir.path().join("b/data.csv")).unwrap()
    );

    ok(&[
        "gen",
        "--preset",
        "twisted-cubic",
        "--per-column-missing",
        "1",
        "--out",
        &p(&dir, "t"),
    ]);
    let mask = fs::read_to_string(dir.path().join("t/mask.csv")).unwrap();
    assert_eq!(mask.matches('0').count(), 100);
}

#[test]
fn gen_rejects_bad_flag_combinations() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "x");
    assert_eq!(
        code(&["gen", "--preset", "union-linear", "--d", "3", "--out", &out]),
        2
    );
    assert_eq!(code(&["gen", "--d", "3", "--out", &out]), 2);
    assert_eq!(
        code(&[
            "gen",
            "--preset",
            "twisted-cubic",
            "--missing",
            "1.0",
            "--out",
            &out
        ]),
        2
    );
    assert_eq!(
        code(&[
            "gen",
            "--preset",
            "twisted-cubic",
            "--per-column-missing",
            "3",
            "--out",
            &out
        ]),
        2
    );
    assert_eq!(
        code(&[
            "gen",
            "--preset",
            "single-nonlinear",
            "--pattern",
            "continuous",
            "--missing",
            "0.3",
            "--out",
            &out
        ]),
        2
    );
    ok(&[
        "gen",
        "--preset",
        "single-nonlinear",
        "--pattern",
        "continuous",
        "--missing",
        "0.3",
        "--sequences",
        "3",
        "--out",
        &out,
    ]);
}

#[test]
fn complete_reports_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "gen",
        "--preset",
        "single-nonlinear",
        "--missing",
        "0.3",
        "--seed",
        "2",
        "--out",
        &p(&dir, "g"),
    ]);
    let (data, mask) = (p(&dir, "g/data.csv"), p(&dir, "g/mask.csv"));

    ok(&[
        "complete",
        "--data",
        &data,
        "--mask",
        &mask,
        "--method",
        "kfmc-poly",
        "--t-max",
        "20",
        "--out",
        &p(&dir, "k"),
    ]);
    let r = json(&dir.path().join("k/report.json"));
    for key in [
        "kernel",
        "hyperparameters",
        "observed_fraction",
        "relative_error",
        "iterations",
        "wall_time_s",
    ] {
        assert!(!r[key].is_null(), "report lacks {key}");
    }
    assert!((r["observed_fraction"].as_f64().unwrap() - 0.7).abs() < 1e-12);
    assert_eq!(r["iterations"], 20);
    let trace = fs::read_to_string(dir.path().join("k/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 22);
    assert!(dir.path().join("k/model.ckpt").exists());
    let completed = fs::read_to_string(dir.path().join("k/completed.csv")).unwrap();
    assert_eq!(completed.lines().count(), 30);
    assert!(!completed.contains("NaN"));

    ok(&[
        "complete",
        "--data",
        &data,
        "--mask",
        &mask,
        "--method",
        "lrf",
        "--rank",
        "10",
        "--out",
        &p(&dir, "l"),
    ]);
    let r = json(&dir.path().join("l/report.json"));
    assert_eq!(r["method"], "lrf");
    assert!(r["relative_error"].as_f64().unwrap() > 0.0);

    assert_eq!(
        code(&[
            "complete",
            "--data",
            &data,
            "--mask",
            &p(&dir, "none.csv"),
            "--out",
            &p(&dir, "e")
        ]),
        2
    );
    assert_eq!(
        code(&[
            "complete",
            "--data",
            &data,
            "--unknown",
            "--out",
            &p(&dir, "e")
        ]),
        2
    );
    assert_eq!(
        code(&[
            "complete",
            "--data",
            &data,
            "--tau",
            "0.5",
            "--t-max",
            "2",
            "--out",
            &p(&dir, "e")
        ]),
        2
    );
}

#[test]
fn numerical_failure_exits_3_and_keeps_the_partial_trace() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "gen",
        "--preset",
        "single-nonlinear",
        "--missing",
        "0.3",
        "--out",
        &p(&dir, "g"),
    ]);
    let out = p(&dir, "f");
    let args = [
        "complete",
        "--data",
        &p(&dir, "g/data.csv"),
        "--mask",
        &p(&dir, "g/mask.csv"),
        "--method",
        "kfmc-poly",
        "--q",
        "200",
        "--t-max",
        "5",
        "--out",
        &out,
    ];
    assert_eq!(code(&args), 3);
    let r = json(&dir.path().join("f/report.json"));
    assert!(r["error"].as_str().unwrap().contains("numerical"));
    assert!(dir.path().join("f/trace.csv").exists());
}

#[test]
fn stream_resume_and_inference_only_pass() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "gen",
        "--preset",
        "union-nonlinear",
        "--missing",
        "0.3",
        "--seed",
        "1",
        "--out",
        &p(&dir, "g"),
    ]);
    let (data, mask) = (p(&dir, "g/data.csv"), p(&dir, "g/mask.csv"));
    let common = ["--data", &data, "--mask", &mask];
    ok(&[
        &["stream"],
        &common[..],
        &[
            "--kernel",
            "rbf",
            "--rank",
            "20",
            "--passes",
            "2",
            "--out",
            &p(&dir, "s"),
        ],
    ]
    .concat());
    let r = json(&dir.path().join("s/report.json"));
    assert_eq!(r["samples_seen"], 600);
    assert_eq!(r["pass_errors"].as_array().unwrap().len(), 2);
    let trace = fs::read_to_string(dir.path().join("s/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 601);
    let ckpt = p(&dir, "s/model.ckpt");

    for out in ["z1", "z2"] {
        ok(&[
            &["stream"],
            &common[..],
            &["--resume", &ckpt, "--passes", "0", "--out", &p(&dir, out)],
        ]
        .concat());
        assert_eq!(
            fs::read(&ckpt).unwrap(),
            fs::read(dir.path().join(out).join("model.ckpt")).unwrap()
        );
    }
    assert_eq!(
        fs::read(dir.path().join("z1/completed.csv")).unwrap(),
        fs::read(dir.path().join("z2/completed.csv")).unwrap()
    );

    ok(&[
        &["stream"],
        &common[..],
        &["--resume", &ckpt, "--passes", "1", "--out", &p(&dir, "c")],
    ]
    .concat());
    assert_eq!(json(&dir.path().join("c/report.json"))["samples_seen"], 900);

    let x = p(&dir, "x");
    let mismatch = [
        &["stream"],
        &common[..],
        &["--resume", &ckpt, "--kernel", "poly", "--out", &x],
    ]
    .concat();
    assert_eq!(code(&mismatch), 2);
    let overridden = [
        &["stream"],
        &common[..],
        &["--resume", &ckpt, "--beta", "0.1", "--out", &x],
    ]
    .concat();
    assert_eq!(code(&overridden), 2);
    assert_eq!(
        code(&[&["stream"], &common[..], &["--out", &p(&dir, "x")]].concat()),
        2
    );
}

#[test]
fn ose_leaves_the_checkpoint_alone() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "gen",
        "--preset",
        "single-nonlinear",
        "--missing",
        "0.3",
        "--seed",
        "4",
        "--out",
        &p(&dir, "g"),
    ]);
    let (data, mask) = (p(&dir, "g/data.csv"), p(&dir, "g/mask.csv"));
    ok(&[
        "complete",
        "--data",
        &data,
        "--method",
        "kfmc-rbf",
        "--rank",
        "30",
        "--t-max",
        "50",
        "--out",
        &p(&dir, "train"),
    ]);
    let ckpt = p(&dir, "train/model.ckpt");
    let before = fs::read(&ckpt).unwrap();

    ok(&[
        "ose",
        "--model",
        &ckpt,
        "--input",
        &data,
        "--mask",
        &mask,
        "--kernel",
        "rbf",
        "--out",
        &p(&dir, "o"),
    ]);
    assert_eq!(before, fs::read(&ckpt).unwrap());
    let r = json(&dir.path().join("o/report.json"));
    assert!(r["relative_error"].as_f64().unwrap() < 0.2, "{r}");

    ok(&[
        "ose",
        "--model",
        &ckpt,
        "--input",
        &data,
        "--mask",
        &mask,
        "--baseline",
        "ose-lrf",
        "--train",
        &data,
        "--lrf-rank",
        "10",
        "--out",
        &p(&dir, "b"),
    ]);
    assert_eq!(json(&dir.path().join("b/report.json"))["method"], "ose-lrf");

    assert_eq!(
        code(&[
            "ose",
            "--model",
            &ckpt,
            "--input",
            &data,
            "--kernel",
            "poly",
            "--out",
            &p(&dir, "x")
        ]),
        2
    );
    assert_eq!(
        code(&[
            "ose",
            "--model",
            &ckpt,
            "--input",
            &data,
            "--baseline",
            "ose-lrf",
            "--out",
            &p(&dir, "x")
        ]),
        2
    );
    ok(&[
        "gen",
        "--d",
        "2",
        "--p",
        "2",
        "--u",
        "1",
        "--m",
        "12",
        "--out",
        &p(&dir, "small"),
    ]);
    assert_eq!(
        code(&[
            "ose",
            "--model",
            &ckpt,
            "--input",
            &p(&dir, "small/data.csv"),
            "--out",
            &p(&dir, "x")
        ]),
        2
    );
    assert_eq!(
        code(&[
            "ose",
            "--model",
            &data,
            "--input",
            &data,
            "--out",
            &p(&dir, "x")
        ]),
        2
    );
}

#[test]
fn thread_cap_is_validated_and_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "gen",
        "--preset",
        "single-nonlinear",
        "--missing",
        "0.3",
        "--out",
        &p(&dir, "g"),
    ]);
    let run = |threads: &str, out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_kfmc"))
            .env("KFMC_THREADS", threads)
            .args([
                "complete",
                "--data",
                &p(&dir, "g/data.csv"),
                "--mask",
                &p(&dir, "g/mask.csv"),
                "--t-max",
                "10",
            ])
            .args(["--out", &p(&dir, out)])
            .status()
            .unwrap();
        status.code().unwrap()
    };
    assert_eq!(run("zero", "x"), 2);
    assert_eq!(run("1", "a"), 0);
    assert_eq!(run("3", "b"), 0);
    assert_eq!(
        fs::read(dir.path().join("a/completed.csv")).unwrap(),
        fs::read(dir.path().join("b/completed.csv")).unwrap()
    );
}

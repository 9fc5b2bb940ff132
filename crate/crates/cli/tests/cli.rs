use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmtf_core::config::{load_truth, truth_blocks, RunConfig, TruthExtras};
use cmtf_core::driver::function_value;
use cmtf_core::io;
use cmtf_core::model::{FactorMatrix, FactorSet, Factors};
use cmtf_core::tensor::DenseMatrix;
use serde_json::Value;

fn cmtf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmtf"))
        .args(args)
        .output()
        .expect("spawn cmtf")
}

fn ok(args: &[&str]) -> String {
    let out = cmtf(args);
    assert!(
        out.status.success(),
        "cmtf {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn repo_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const SMALL: &str = r#"
[synth]
experiment = "exp1a"
seed = 5
noise = [0.1, 0.1]
dims = { i = 10, j = 12, k = 8, y_cols = 9, rank = 2 }

[solver]
n_starts = 2
max_outer_iters = 40
"#;

fn write_small(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

struct Trace {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_trace(path: &Path) -> Trace {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    Trace { header, rows }
}

impl Trace {
    fn col(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
    }

    /// Last row of the given start.
    fn last_of(&self, start: usize) -> &Vec<String> {
        let c = self.col("start");
        self.rows.iter().rev().find(|r| r[c] == start.to_string()).unwrap()
    }
}

fn metrics_json(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn missing_config_names_the_path() {
    let out = cmtf(&["run", "/definitely/not/here.cfg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.cfg"));
}

#[test]
fn invalid_config_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "[synth]\nexperiment = \"exp1a\"\n[solver]\nn_starts = 0\n").unwrap();
    let out = cmtf(&["run", p.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_starts"));
}

#[test]
fn zero_outer_iterations_write_initial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out = dir.path().join("o");
    ok(&["run", cfg.to_str().unwrap(), "--starts", "1", "--max-outer", "0", "--out", out.to_str().unwrap()]);
    for f in ["factors.bin", "data.bin", "truth.bin", "trace.csv", "metrics.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let trace = read_trace(&out.join("trace.csv"));
    assert_eq!(trace.rows.len(), 1);
    assert_eq!(trace.rows[0][trace.col("iteration")], "0");
    assert_eq!(trace.rows[0][trace.col("schema")], "cmtf-trace-1");
    let m = metrics_json(&out);
    assert_eq!(m["iterations"], 0);
    assert!(m["evaluation"]["fms"]["total"].as_f64().unwrap() < 1.0);
}

#[test]
fn factors_file_reproduces_final_function_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out = dir.path().join("o");
    ok(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let m = metrics_json(&out);
    let best = m["best_start"].as_u64().unwrap() as usize;
    let trace = read_trace(&out.join("trace.csv"));
    let f_trace: f64 = trace.last_of(best)[trace.col("f")].parse().unwrap();

    let saved = RunConfig::from_path(&out.join("config.toml")).unwrap();
    let run = saved.resolve::<f64>(&out).unwrap();
    let factors = io::load_factors::<f64>(&out.join("factors.bin")).unwrap();
    let f = function_value(&run.model, &factors).unwrap().value;
    assert!((f - f_trace).abs() <= 1e-10 * f_trace.abs().max(1.0), "{f} vs {f_trace}");
    assert_eq!(m["final_f"].as_f64().unwrap(), f_trace);
}

#[test]
fn fixed_seed_single_thread_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        ok(&["run", cfg.to_str().unwrap(), "--threads", "1", "--max-outer", "15", "--out", o.to_str().unwrap()]);
    }
    assert_eq!(fs::read(a.join("factors.bin")).unwrap(), fs::read(b.join("factors.bin")).unwrap());
}

fn score(factors: &Path, truth: &Path) -> Value {
    serde_json::from_str(&ok(&["metrics", factors.to_str().unwrap(), truth.to_str().unwrap()])).unwrap()
}

#[test]
fn metrics_of_identical_permuted_and_random_factors() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "exp1a", "--seed", "1", "--out", dir.path().to_str().unwrap()]);
    let truth_path = dir.path().join("truth.bin");
    assert_eq!(score(&truth_path, &truth_path)["fms"]["total"].as_f64().unwrap(), 1.0);

    let (truth, _) = load_truth::<f64>(&truth_path).unwrap();
    let perm = [2, 0, 3, 1];
    let permuted = FactorSet::new(truth.decompositions.iter().map(|f| f.permuted(&perm)).collect());
    let p = dir.path().join("permuted.bin");
    io::save_factors(&p, &permuted).unwrap();
    assert!((score(&p, &truth_path)["fms"]["total"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let mut state = 7u64;
    let mut rnd = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let random = FactorSet::new(
        truth
            .decompositions
            .iter()
            .map(|f| Factors {
                kind: f.kind,
                modes: f
                    .modes
                    .iter()
                    .map(|m| match m {
                        FactorMatrix::Dense(x) => FactorMatrix::Dense(DenseMatrix::from_fn(x.rows(), x.cols(), |_, _| rnd())),
                        FactorMatrix::Slices(s) => FactorMatrix::Slices(
                            s.iter().map(|x| DenseMatrix::from_fn(x.rows(), x.cols(), |_, _| rnd())).collect(),
                        ),
                    })
                    .collect(),
            })
            .collect(),
    );
    let r = dir.path().join("random.bin");
    io::save_factors(&r, &random).unwrap();
    assert!(score(&r, &truth_path)["fms"]["total"].as_f64().unwrap() < 0.9);
}

#[test]
fn metrics_rejects_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let fs_a = FactorSet::new(vec![Factors::matrix(DenseMatrix::<f64>::identity(3), DenseMatrix::identity(3))]);
    let fs_b = FactorSet::new(vec![Factors::matrix(DenseMatrix::<f64>::identity(3), DenseMatrix::filled(4, 3, 1.0))]);
    io::save_factors(&a, &fs_a).unwrap();
    io::save_blocks(&b, &truth_blocks(&fs_b, &TruthExtras::default())).unwrap();
    let out = cmtf(&["metrics", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn generated_data_runs_from_its_config() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "exp3", "--seed", "2", "--a-noise", "0.5", "--out", dir.path().to_str().unwrap()]);
    let cfg = dir.path().join("run.toml");
    ok(&["run", cfg.to_str().unwrap(), "--starts", "1", "--max-outer", "5"]);
    let m = metrics_json(&dir.path().join("fit"));
    let ev = &m["evaluation"];
    assert_eq!(ev["fits"].as_array().unwrap().len(), 2);
    assert!(ev["clustering_accuracy"][0].as_f64().is_some());
    assert!(ev["fms_a_clean"].as_f64().is_some());
}

#[test]
fn bench_single_replicate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "bench",
            "exp1a",
            "--replicates",
            "1",
            "--config",
            cfg.to_str().unwrap(),
            "--threads",
            "1",
            "--max-outer",
            "10",
            "--out",
            out.to_str().unwrap(),
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let summary = read_trace(&a.join("summary.csv"));
    assert!(summary.rows.iter().all(|r| r[summary.col("n")] == "1"));
    let metrics: Vec<&str> = summary.rows.iter().map(|r| r[1].as_str()).collect();
    for m in ["fit_0", "fit_1", "fms_total", "fms_d0.B", "parafac2_residual_0"] {
        assert!(metrics.contains(&m), "{m} missing from {metrics:?}");
    }
    let strip = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("replicates.csv"))
            .unwrap()
            .lines()
            .filter(|l| !l.contains(",seconds,"))
            .map(String::from)
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn bench_rejects_unknown_experiment() {
    let out = cmtf(&["bench", "exp7", "--replicates", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exp7"));
}

#[test]
fn canonical_configs_resolve() {
    for name in ["exp1a", "exp1b", "exp1c", "exp2a", "exp2b", "exp2c", "exp2d", "exp3", "exp3_noisy_ridge", "exp4"] {
        let path = repo_configs().join(format!("{name}.cfg"));
        let cfg = RunConfig::from_path(&path).unwrap();
        assert_eq!(cfg.solver.max_outer_iters, 1000, "{name}");
        if !matches!(name, "exp1b" | "exp2b") {
            cfg.resolve::<f64>(path.parent().unwrap()).unwrap();
        }
    }
}

#[test]
fn exp1a_run_keeps_parafac2_residual_small() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_configs().join("exp1a.cfg");
    ok(&["run", cfg.to_str().unwrap(), "--starts", "2", "--out", dir.path().to_str().unwrap()]);
    let trace = read_trace(&dir.path().join("trace.csv"));
    let best = metrics_json(dir.path())["best_start"].as_u64().unwrap() as usize;
    let res: f64 = trace.last_of(best)[trace.col("parafac2_residual_0")].parse().unwrap();
    assert!(res <= 1e-4, "final PARAFAC2 residual {res}");
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cmtf_core::config::{RunConfig, SynthSection};
use cmtf_core::driver::{mode_label, multi_start_fit};
use cmtf_core::metrics::evaluate;
use cmtf_core::synth::{Experiment, EXP3_RIDGE};
use serde_json::{json, Value};

use crate::output::write_json;
use crate::{emit, with_threads, SolverFlags};

/// Outer iterations used when neither the config nor a flag sets them.
pub const BENCH_MAX_OUTER: usize = 1000;

struct Variant {
    label: String,
    cfg: RunConfig,
}

/// Ridge/coupling/perturbation rows of the evolving-network table.
fn exp3_grid(base: &RunConfig) -> Vec<Variant> {
    let mut out = Vec::new();
    for (ridge, coupled) in [(None, false), (None, true), (Some(EXP3_RIDGE), true)] {
        for a_noise in [0.0, 0.5, 1.0] {
            let mut cfg = base.clone();
            cfg.model.ridge = ridge;
            cfg.model.coupled = coupled;
            if let Some(s) = cfg.synth.as_mut() {
                s.a_noise = a_noise;
            }
            let label = format!(
                "ridge={} coupling={} noise={a_noise}",
                if ridge.is_some() { "yes" } else { "no" },
                if coupled { "yes" } else { "no" }
            );
            out.push(Variant { label, cfg });
        }
    }
    out
}

#[derive(Default)]
struct Series(BTreeMap<String, Vec<f64>>);

impl Series {
    fn push(&mut self, name: impl Into<String>, v: f64) {
        self.0.entry(name.into()).or_default().push(v);
    }
}

fn stats(values: &[f64]) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    (median, v[0], v[n - 1])
}

/// `cmtf bench`: replicate `r` generates data with seed `seed + r` and
/// starts the solver from seed `solver.seed + r·n_starts`.
pub fn cmd_bench(
    experiment: &str,
    replicates: usize,
    config: Option<&Path>,
    grid: bool,
    flags: &SolverFlags,
    out: &Path,
) -> Result<()> {
    let experiment: Experiment = experiment.parse()?;
    if replicates == 0 {
        bail!("--replicates must be at least 1");
    }
    let mut base = match config {
        Some(p) => RunConfig::from_path(p)?,
        None => {
            let mut cfg = RunConfig::for_experiment(experiment, 0);
            cfg.solver.max_outer_iters = BENCH_MAX_OUTER;
            cfg
        }
    };
    if base.data.is_some() {
        bail!("bench generates its data; the base config must not have a [data] section");
    }
    let synth = base.synth.get_or_insert_with(|| SynthSection {
        experiment: experiment.id().into(),
        seed: 0,
        noise: None,
        a_noise: 0.0,
        dims: None,
    });
    synth.experiment = experiment.id().into();
    let seed = flags.seed.unwrap_or(synth.seed);
    let mut solver_flags = flags.clone();
    solver_flags.seed = None;
    solver_flags.apply(&mut base);

    let variants = if grid {
        if experiment != Experiment::Exp3 {
            bail!("--grid is only defined for exp3");
        }
        exp3_grid(&base)
    } else {
        vec![Variant {
            label: experiment.id().into(),
            cfg: base.clone(),
        }]
    };

    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut per_rep = csv::Writer::from_path(out.join("replicates.csv"))?;
    per_rep.write_record(["variant", "replicate", "data_seed", "metric", "value"])?;
    let mut summary = csv::Writer::from_path(out.join("summary.csv"))?;
    summary.write_record(["variant", "metric", "n", "median", "min", "max"])?;
    let mut json_variants = Vec::new();
    let t0 = Instant::now();

    for v in &variants {
        let mut series = Series::default();
        let mut failures = Vec::new();
        for r in 0..replicates {
            let mut cfg = v.cfg.clone();
            let data_seed = seed.wrapping_add(r as u64);
            cfg.synth.as_mut().expect("synth section").seed = data_seed;
            cfg.solver.seed = base.solver.seed.wrapping_add((r * cfg.solver.n_starts) as u64);
            let run = cfg.resolve::<f64>(Path::new("."))?;
            let report = match with_threads(run.threads, || multi_start_fit(&run.model, &run.settings))? {
                Ok(rep) => rep,
                Err(e) => {
                    failures.push(format!("replicate {r}: {e}"));
                    continue;
                }
            };
            let best = report.best_run();
            let eval = evaluate(&run.model.datasets, &best.factors, run.reference())?;
            let mut row = Series::default();
            for (d, f) in eval.fits.iter().enumerate() {
                row.push(format!("fit_{d}"), *f);
            }
            if let Some(fms) = &eval.fms {
                row.push("fms_total", fms.total);
                for (d, dec) in fms.decompositions.iter().enumerate() {
                    for (m, s) in dec.per_mode.iter().enumerate() {
                        row.push(format!("fms_{}", mode_label(&run.model, d, m)), *s);
                    }
                }
            }
            for (j, res) in eval.parafac2_residuals.iter().enumerate() {
                row.push(format!("parafac2_residual_{j}"), *res);
            }
            for (d, c) in eval.clustering.iter().enumerate() {
                if let Some(c) = c {
                    row.push(format!("clustering_d{d}"), *c);
                }
            }
            if let Some(x) = eval.fms_a_clean {
                row.push("fms_a_clean", x);
            }
            row.push("final_f", best.final_f);
            row.push("iterations", best.iterations() as f64);
            row.push("seconds", best.seconds);
            for (name, vals) in row.0 {
                per_rep.write_record([&v.label, &r.to_string(), &data_seed.to_string(), &name, &vals[0].to_string()])?;
                series.push(name, vals[0]);
            }
        }
        let mut metrics = serde_json::Map::new();
        for (name, vals) in &series.0 {
            let (median, min, max) = stats(vals);
            summary.write_record([
                &v.label,
                name,
                &vals.len().to_string(),
                &median.to_string(),
                &min.to_string(),
                &max.to_string(),
            ])?;
            metrics.insert(
                name.clone(),
                json!({ "median": median, "min": min, "max": max, "values": vals }),
            );
        }
        emit(&variant_table(&v.label, &series, replicates - failures.len(), &failures))?;
        json_variants.push(json!({
            "label": v.label,
            "config": serde_json::to_value(&v.cfg)?,
            "completed": replicates - failures.len(),
            "failures": failures,
            "metrics": Value::Object(metrics),
        }));
    }
    per_rep.flush()?;
    summary.flush()?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "experiment": experiment.id(),
            "replicates": replicates,
            "seed": seed,
            "seconds": t0.elapsed().as_secs_f64(),
            "variants": json_variants,
        }),
    )?;
    emit(&format!("wrote {}\n", out.display()))
}

fn variant_table(label: &str, series: &Series, completed: usize, failures: &[String]) -> String {
    let mut s = format!("== {label} ({completed} replicates)\n");
    for (name, vals) in &series.0 {
        let (median, min, max) = stats(vals);
        s += &format!("  {name:<24} median {median:>12.6}  min {min:>12.6}  max {max:>12.6}\n");
    }
    for f in failures {
        s += &format!("  failed: {f}\n");
    }
    s
}

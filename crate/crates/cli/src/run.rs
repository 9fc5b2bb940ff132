use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cmtf_core::config::{truth_blocks, DataSection, RunConfig, TruthExtras};
use cmtf_core::driver::multi_start_fit;
use cmtf_core::io;
use cmtf_core::metrics::evaluate;
use serde_json::json;

use crate::output::{evaluation_json, write_json, write_trace};
use crate::{emit, with_threads, SolverFlags};

/// `cmtf run`: fits, then writes `factors.bin`, `data.bin`, `truth.bin`
/// (when known), `trace.csv`, `metrics.json` and the effective
/// `config.toml` into the output directory.
pub fn cmd_run(config: &Path, flags: &SolverFlags, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::from_path(config)?;
    flags.apply(&mut cfg);
    let base = config.parent().unwrap_or(Path::new("."));
    let run = cfg
        .resolve::<f64>(base)
        .with_context(|| format!("invalid config {}", config.display()))?;
    let out = out.unwrap_or_else(|| run.out_dir.clone());
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;

    let report = with_threads(run.threads, || multi_start_fit(&run.model, &run.settings))??;
    let best = report.best_run();
    let eval = evaluate(&run.model.datasets, &best.factors, run.reference())?;

    io::save_factors(&out.join("factors.bin"), &best.factors)?;
    io::save_blocks(&out.join("data.bin"), &io::dataset_blocks(&run.model.datasets))?;
    if let Some(truth) = &run.truth {
        let extras = TruthExtras {
            labels: run.labels.clone(),
            clean_a: run.clean_a.clone(),
        };
        io::save_blocks(&out.join("truth.bin"), &truth_blocks(truth, &extras))?;
    }
    write_trace(&out.join("trace.csv"), &report)?;

    // The saved config reproduces the run: data paths become absolute.
    let mut effective = cfg.clone();
    if let Some(d) = &cfg.data {
        let abs = |p: &Path| fs::canonicalize(base.join(p)).unwrap_or_else(|_| base.join(p));
        effective.data = Some(DataSection {
            file: abs(&d.file),
            truth: d.truth.as_deref().map(abs),
            normalize: d.normalize,
        });
    }
    effective.output.dir = out.clone();
    fs::write(out.join("config.toml"), effective.to_toml()?)?;

    let last = best.last();
    let starts: Vec<_> = report
        .runs
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(r) => json!({
                "start": i, "seed": r.seed, "final_f": r.final_f, "iterations": r.iterations(),
                "stop_reason": r.stop_reason.to_string(), "seconds": r.seconds,
            }),
            Err(e) => json!({ "start": i, "error": e.to_string() }),
        })
        .collect();
    let metrics = json!({
        "best_start": report.best,
        "final_f": best.final_f,
        "iterations": best.iterations(),
        "stop_reason": best.stop_reason.to_string(),
        "mode_order": best.mode_order,
        "coupling_residuals": last.coupling_residuals,
        "split_gap": last.split_gap,
        "feasible": last.feasible,
        "seconds": best.seconds,
        "evaluation": evaluation_json(&eval),
        "starts": starts,
    });
    write_json(&out.join("metrics.json"), &metrics)?;

    let mut msg = format!(
        "f = {:.6e} after {} iterations ({}), fits {:?}",
        best.final_f,
        best.iterations(),
        best.stop_reason,
        eval.fits.iter().map(|f| (f * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
    if let Some(fms) = &eval.fms {
        msg += &format!(", FMS {:.4}", fms.total);
    }
    emit(&format!("{msg}\nwrote {}\n", out.display()))
}

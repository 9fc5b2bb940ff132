//! Trace and report writers.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cmtf_core::driver::{IterationRecord, MultiStartReport};
use cmtf_core::metrics::{Evaluation, FmsResult};
use serde_json::{json, Value};

/// Value of the `schema` column; bump when columns change.
pub const TRACE_SCHEMA: &str = "cmtf-trace-1";

/// Writes one row per start and outer iteration.
///
/// Columns: `schema, start, seed, iteration, f, fit_<d>...,
/// parafac2_residual_<j>..., coupling_residual_<c>..., split_gap, feasible,
/// seconds`.
pub fn write_trace(path: &Path, report: &MultiStartReport<f64>) -> Result<()> {
    let first = report.best_run().last();
    let mut header: Vec<String> = ["schema", "start", "seed", "iteration", "f"].map(String::from).to_vec();
    header.extend((0..first.fits.len()).map(|d| format!("fit_{d}")));
    header.extend((0..first.parafac2_residuals.len()).map(|j| format!("parafac2_residual_{j}")));
    header.extend((0..first.coupling_residuals.len()).map(|c| format!("coupling_residual_{c}")));
    header.extend(["split_gap", "feasible", "seconds"].map(String::from));

    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(&header)?;
    for run in report.runs.iter().flatten() {
        for rec in &run.records {
            w.write_record(trace_row(run.start, run.seed, rec))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn trace_row(start: usize, seed: u64, rec: &IterationRecord) -> Vec<String> {
    let mut row = vec![
        TRACE_SCHEMA.to_string(),
        start.to_string(),
        seed.to_string(),
        rec.iteration.to_string(),
        rec.f.to_string(),
    ];
    row.extend(rec.fits.iter().map(f64::to_string));
    row.extend(rec.parafac2_residuals.iter().map(f64::to_string));
    row.extend(rec.coupling_residuals.iter().map(f64::to_string));
    row.push(rec.split_gap.to_string());
    row.push(rec.feasible.to_string());
    row.push(rec.seconds.to_string());
    row
}

pub fn fms_json(fms: &FmsResult) -> Value {
    json!({
        "total": fms.total,
        "decompositions": fms.decompositions.iter().map(|d| json!({
            "total": d.total,
            "per_mode": d.per_mode,
            "permutation": d.permutation,
        })).collect::<Vec<_>>(),
    })
}

pub fn evaluation_json(e: &Evaluation) -> Value {
    json!({
        "fits": e.fits,
        "parafac2_residuals": e.parafac2_residuals,
        "fms": e.fms.as_ref().map(fms_json),
        "clustering_accuracy": e.clustering,
        "fms_a_clean": e.fms_a_clean,
    })
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

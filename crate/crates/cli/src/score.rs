use std::path::Path;

use anyhow::{Context, Result};
use cmtf_core::config::load_truth;
use cmtf_core::io;
use cmtf_core::metrics::{evaluate, Reference};

use crate::emit;
use crate::output::evaluation_json;

/// `cmtf metrics`: prints FMS, clustering and (with `--data`) fits as JSON.
pub fn cmd_metrics(factors: &Path, truth: &Path, data: Option<&Path>) -> Result<()> {
    let estimate = io::load_factors::<f64>(factors)?;
    let (truth_set, extras) = load_truth::<f64>(truth)?;
    let datasets = match data {
        Some(p) => io::datasets_from_blocks(&io::load_blocks(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => Vec::new(),
    };
    let reference = Reference {
        truth: Some(&truth_set),
        labels: extras.labels.as_deref(),
        clean_a: extras.clean_a.as_ref(),
    };
    let eval = evaluate(&datasets, &estimate, reference)
        .with_context(|| format!("cannot compare {} with {}", factors.display(), truth.display()))?;
    emit(&(serde_json::to_string_pretty(&evaluation_json(&eval))? + "\n"))
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cmtf_core::config::{model_sections, truth_blocks, DataSection, RunConfig, TruthExtras};
use cmtf_core::io;
use cmtf_core::synth::{generate, Experiment, ModelOptions, SynthData, SynthSpec};

/// `cmtf gen`: writes `data.bin`, `truth.bin` and a `run.toml` that fits the
/// experiment's model to them.
pub fn cmd_gen(experiment: &str, seed: u64, noise: Option<[f64; 2]>, a_noise: f64, out: &Path) -> Result<()> {
    let experiment: Experiment = experiment.parse()?;
    let mut spec = SynthSpec::new(experiment, seed).with_a_noise(a_noise);
    if let Some(n) = noise {
        spec = spec.with_noise(n);
    }
    spec.check()?;
    let data: SynthData<f64> = generate(&spec)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    io::save_blocks(&out.join("data.bin"), &io::dataset_blocks(&data.datasets))?;
    let extras = TruthExtras {
        labels: data.labels.clone(),
        clean_a: data.clean_a.clone(),
    };
    io::save_blocks(&out.join("truth.bin"), &truth_blocks(&data.truth, &extras))?;

    let model = data.model(&ModelOptions::for_experiment(experiment))?;
    let (decompositions, couplings) = model_sections(&model)?;
    let mut cfg = RunConfig {
        data: Some(DataSection {
            file: PathBuf::from("data.bin"),
            truth: Some(PathBuf::from("truth.bin")),
            normalize: true,
        }),
        decompositions,
        couplings,
        ..RunConfig::default()
    };
    cfg.output.dir = PathBuf::from("fit");
    cfg.solver.max_outer_iters = 1000;
    fs::write(out.join("run.toml"), cfg.to_toml()?)?;
    crate::emit(&format!("wrote {}\n", out.display()))
}

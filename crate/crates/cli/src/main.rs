//! `cmtf`: fit coupled factorization models from config files, generate the
//! synthetic benchmarks, and score factor files.

mod bench;
mod gen;
mod output;
mod run;
mod score;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmtf_core::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "cmtf", version, about = "AO-ADMM for coupled matrix, CP and PARAFAC2 models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model described by a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
        /// Output directory (overrides `[output] dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run seeded replicates of a synthetic experiment and summarize them.
    Bench {
        /// exp1a, exp1b, exp1c, exp2a, exp2b, exp2c, exp2d, exp3 or exp4.
        experiment: String,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
        /// Base config whose solver and model switches are used; the
        /// experiment's canonical settings otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// exp3 only: the ridge/coupling/noise grid of the evaluation table.
        #[arg(long)]
        grid: bool,
        #[command(flatten)]
        solver: SolverFlags,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
    },
    /// Score a factor file against a truth file.
    Metrics {
        factors: PathBuf,
        truth: PathBuf,
        /// Data container; adds fits to the report.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write a synthetic dataset, its truth and a matching run config.
    Gen {
        experiment: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Noise level of each dataset (two values).
        #[arg(long, num_args = 2, value_names = ["ETA0", "ETA1"])]
        noise: Option<Vec<f64>>,
        /// Perturbation of the shared factor (evolving-network experiment).
        #[arg(long, default_value_t = 0.0)]
        a_noise: f64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
}

/// Overrides for the `[solver]` section.
#[derive(Args, Debug, Clone, Default)]
pub struct SolverFlags {
    /// Base seed; start `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores). One thread is bit-reproducible.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Inner ADMM absolute and relative tolerance.
    #[arg(long)]
    pub inner_tol: Option<f64>,
    #[arg(long)]
    pub outer_abs_tol: Option<f64>,
    #[arg(long)]
    pub outer_rel_tol: Option<f64>,
}

impl SolverFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.solver;
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.threads {
            s.threads = v;
        }
        if let Some(v) = self.starts {
            s.n_starts = v;
        }
        if let Some(v) = self.max_outer {
            s.max_outer_iters = v;
        }
        if let Some(v) = self.inner_tol {
            s.inner_abs_tol = v;
            s.inner_rel_tol = v;
        }
        if let Some(v) = self.outer_abs_tol {
            s.outer_abs_tol = v;
        }
        if let Some(v) = self.outer_rel_tol {
            s.outer_rel_tol = v;
        }
    }
}

/// Writes to stdout; a closed pipe (`cmtf ... | head`) is not an error.
pub fn emit(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Runs `f` on a pool with `threads` workers (0 = rayon's default).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> anyhow::Result<R> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(f))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, solver, out } => run::cmd_run(&config, &solver, out),
        Command::Bench {
            experiment,
            replicates,
            config,
            grid,
            solver,
            out,
        } => bench::cmd_bench(&experiment, replicates, config.as_deref(), grid, &solver, &out),
        Command::Metrics { factors, truth, data } => score::cmd_metrics(&factors, &truth, data.as_deref()),
        Command::Gen {
            experiment,
            seed,
            noise,
            a_noise,
            out,
        } => gen::cmd_gen(&experiment, seed, noise.map(|n| [n[0], n[1]]), a_noise, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

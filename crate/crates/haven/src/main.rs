//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, unknown ids, malformed
//! config), 2 runtime or numerical failure (I/O, divergence).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use haven::harness::config::{algo_to_variant, RunConfig, ALGO_IDS};
use haven::harness::{self, HarnessError};

#[derive(Parser)]
#[command(name = "haven", version, about = "Hierarchical value decomposition trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithm id.
    #[arg(long)]
    algo: Option<String>,
    /// Environment id.
    #[arg(long)]
    env: Option<String>,
    /// Run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Total environment steps to train for.
    #[arg(long)]
    total_steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write run artifacts.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export greedy (state, macro action, primitive action) rows from a
    /// checkpoint.
    Dump {
        #[command(flatten)]
        common: CommonOpts,
        /// Checkpoint file written by a training run.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of greedy episodes to export.
        #[arg(long, default_value_t = 8)]
        episodes: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run per seed and aggregate success rates.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated seed list, e.g. 1,2,3,4,5.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Output directory (per-seed subdirectories plus sweep.csv).
        #[arg(long)]
        out: PathBuf,
    },
}

/// Builds the effective configuration: defaults, then config file, then
/// flags.
fn effective_config(common: &CommonOpts) -> Result<RunConfig, String> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(algo) = &common.algo {
        let (variant, mixer) = algo_to_variant(algo).ok_or_else(|| {
            format!("unknown algorithm `{algo}` (expected one of {})", ALGO_IDS.join(", "))
        })?;
        cfg.train.variant = variant;
        cfg.train.mixer = mixer;
    }
    if let Some(env) = &common.env {
        cfg.env_id = env.clone();
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(steps) = common.total_steps {
        cfg.train.total_env_steps = steps;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn runtime_error(e: &HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successful exits, anything else is
            // a usage error
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };

    match cli.command {
        Command::Train { common, out } => {
            let cfg = match effective_config(&common) {
                Ok(cfg) => cfg,
                Err(e) => return usage_error(&e),
            };
            match harness::run_training(&cfg, &out) {
                Ok(_) => {
                    println!("run complete: {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => runtime_error(&e),
            }
        }
        Command::Dump {
            common,
            checkpoint,
            episodes,
            out,
        } => {
            let cfg = match effective_config(&common) {
                Ok(cfg) => cfg,
                Err(e) => return usage_error(&e),
            };
            let policy = match harness::load_policy(&cfg, &checkpoint) {
                Ok(p) => p,
                Err(e) => return runtime_error(&e),
            };
            let make_env = || cfg.make_env();
            match harness::export_policy_dump(&policy, &cfg.train, &make_env, episodes)
                .and_then(|dump| {
                    std::fs::write(&out, dump).map_err(|source| HarnessError::Io {
                        path: out.clone(),
                        source,
                    })
                }) {
                Ok(()) => {
                    println!("dump written: {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => runtime_error(&e),
            }
        }
        Command::Sweep { common, seeds, out } => {
            if seeds.len() < 2 {
                return usage_error("sweep needs at least 2 seeds");
            }
            let cfg = match effective_config(&common) {
                Ok(cfg) => cfg,
                Err(e) => return usage_error(&e),
            };
            match harness::run_sweep(&cfg, &seeds, &out) {
                Ok(_) => {
                    println!("sweep complete: {}", out.join("sweep.csv").display());
                    ExitCode::SUCCESS
                }
                Err(e) => runtime_error(&e),
            }
        }
    }
}

//! Experiment orchestration: training runs with on-disk artifacts,
//! policy dumps for offline analysis, and multi-seed sweeps.
//!
//! Output directory layout of one run:
//! - `metrics.csv` - one row per evaluation point
//! - `manifest` - effective config + provenance; a run is reproducible
//!   from this file alone
//! - `checkpoint.txt` - latest parameters (overwritten each evaluation)
//! - `checkpoint_final.txt` - parameters at the end of training
//! - `policy_dump.csv` - greedy (state, macro action, primitive action)
//!   rows from the final policy

pub mod config;
pub mod metrics;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng as _;
use thiserror::Error;

use crate::envs::Env;
use crate::hierarchy::Controller;
use crate::learner::{self, stream_seed, HierarchicalPolicy, Learner, TrainConfig, TrainError};
use config::RunConfig;
use metrics::{MetricRow, METRICS_HEADER};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] haven_tensor::CheckpointError),
    #[error("checkpoint does not fit the configured environment: {0}")]
    CheckpointMismatch(String),
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Trains to completion and writes all run artifacts into `out_dir`.
/// Returns the trained learner for further inspection.
pub fn run_training(cfg: &RunConfig, out_dir: &Path) -> Result<Learner, HarnessError> {
    fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let started = unix_ms();

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics_file = fs::File::create(&metrics_path).map_err(|source| HarnessError::Io {
        path: metrics_path.clone(),
        source,
    })?;
    writeln!(metrics_file, "{METRICS_HEADER}").map_err(|source| HarnessError::Io {
        path: metrics_path.clone(),
        source,
    })?;

    let make_env = || cfg.make_env();
    let wall_clock = cfg.wall_clock;
    let ckpt_path = out_dir.join("checkpoint.txt");
    let mut io_err: Option<HarnessError> = None;
    let result = learner::run(cfg.train.clone(), &make_env, &mut |row: &MetricRow,
                                                                  learner: &Learner| {
        if io_err.is_some() {
            return;
        }
        let mut row = row.clone();
        if !wall_clock {
            row.wall_ms = 0;
        }
        if let Err(source) = writeln!(metrics_file, "{}", row.to_csv_line()) {
            io_err = Some(HarnessError::Io {
                path: metrics_path.clone(),
                source,
            });
            return;
        }
        if let Err(e) = learner.policy.param_set().save(&ckpt_path) {
            io_err = Some(HarnessError::Checkpoint(e));
        }
    });
    if let Some(e) = io_err {
        return Err(e);
    }
    let (trained, outcome) = match result {
        Ok(ok) => ok,
        Err(e @ TrainError::Diverged(_)) => {
            // leave a diagnostic trail next to the partial artifacts
            let _ = write_file(&out_dir.join("DIVERGED"), &format!("{e}\n"));
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };

    trained
        .policy
        .param_set()
        .save(&out_dir.join("checkpoint_final.txt"))?;

    let dump = export_policy_dump(
        &trained.policy,
        &trained.cfg,
        &make_env,
        trained.cfg.eval_episodes,
    )?;
    write_file(&out_dir.join("policy_dump.csv"), &dump)?;

    let manifest = format!(
        "haven run manifest\n\
         revision = {}\n\
         algo = {}\n\
         started_unix_ms = {}\n\
         finished_unix_ms = {}\n\
         env_steps = {}\n\
         episodes = {}\n\
         eval_points = {}\n\
         outputs = metrics.csv checkpoint.txt checkpoint_final.txt policy_dump.csv\n\
         \n\
         # effective configuration (reproduces this run)\n{}",
        git_revision(),
        config::variant_to_algo(cfg.train.variant, cfg.train.mixer),
        started,
        unix_ms(),
        outcome.env_steps,
        outcome.episodes,
        outcome.metrics.len(),
        cfg.to_config_text(),
    );
    write_file(&out_dir.join("manifest"), &manifest)?;
    Ok(trained)
}

/// Greedy-policy export: one CSV row per (episode, step, agent) holding the
/// global state features, the macro action in force and the primitive
/// action taken. Flat variants write -1 in the macro column.
pub fn export_policy_dump(
    policy: &HierarchicalPolicy,
    cfg: &TrainConfig,
    make_env: &dyn Fn() -> Box<dyn Env>,
    episodes: usize,
) -> Result<String, HarnessError> {
    let state_dim = make_env().spec().state_dim;
    if state_dim != policy.state_dim {
        return Err(HarnessError::CheckpointMismatch(format!(
            "policy expects state_dim {}, env has {}",
            policy.state_dim, state_dim
        )));
    }
    let mut out = String::from("episode,t,agent,macro_action,primitive_action");
    for f in 0..state_dim {
        out.push_str(&format!(",f{f}"));
    }
    out.push('\n');

    for episode in 0..episodes {
        let mut env = make_env();
        let seed = stream_seed(cfg.seed, 0x6_0000_0000 + episode as u64);
        let (mut state, mut obs) = env.reset(seed);
        let mut controller = Controller::new(
            policy.layout,
            cfg.k,
            policy.macro_agent.as_ref(),
            &policy.low_agent,
        );
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
        let mut t = 0usize;
        loop {
            let chosen = controller.act(
                policy.macro_agent.as_ref(),
                &policy.low_agent,
                &obs,
                0.0,
                &mut rng,
            );
            for (agent, &prim) in chosen.primitive_actions.iter().enumerate() {
                let macro_action = controller.current_macro()[agent]
                    .map(|m| m as i64)
                    .unwrap_or(-1);
                out.push_str(&format!("{episode},{t},{agent},{macro_action},{prim}"));
                for v in &state {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
            let step = env.step(&chosen.primitive_actions)?;
            state = step.next_state;
            obs = step.next_observations;
            t += 1;
            if step.terminated {
                break;
            }
        }
    }
    Ok(out)
}

/// Loads a checkpoint into a fresh policy built for `cfg`'s environment.
pub fn load_policy(cfg: &RunConfig, checkpoint: &Path) -> Result<HierarchicalPolicy, HarnessError> {
    let spec = cfg.make_env().spec().clone();
    let mut init_rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
    let policy = HierarchicalPolicy::new(&cfg.train, &spec, &mut init_rng);
    policy
        .param_set()
        .load(checkpoint)
        .map_err(|e| HarnessError::CheckpointMismatch(e.to_string()))?;
    Ok(policy)
}

/// Nearest-rank percentile (p in [0, 100]) of an unsorted sample.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in percentile input"));
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Multi-seed sweep: trains one run per seed under `out_dir/seed_<s>/`,
/// then aggregates eval success rates per evaluation point into
/// `sweep.csv` (median and 25/75 percentiles, nearest-rank).
pub fn run_sweep(base: &RunConfig, seeds: &[u64], out_dir: &Path) -> Result<String, HarnessError> {
    assert!(seeds.len() >= 2, "sweep needs at least 2 seeds");
    let mut per_seed: Vec<Vec<MetricRow>> = Vec::new();
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.train.seed = seed;
        let seed_dir = out_dir.join(format!("seed_{seed}"));
        run_training(&cfg, &seed_dir)?;
        let text = fs::read_to_string(seed_dir.join("metrics.csv")).map_err(|source| {
            HarnessError::Io {
                path: seed_dir.join("metrics.csv"),
                source,
            }
        })?;
        per_seed.push(parse_metric_rows(&text));
    }

    let points = per_seed.iter().map(|m| m.len()).min().unwrap_or(0);
    let mut report = String::from("point,env_step,success_median,success_p25,success_p75\n");
    for i in 0..points {
        let steps: Vec<f64> = per_seed.iter().map(|m| m[i].env_step as f64).collect();
        let succ: Vec<f64> = per_seed.iter().map(|m| m[i].eval_success_rate).collect();
        report.push_str(&format!(
            "{},{},{},{},{}\n",
            i,
            percentile_nearest_rank(&steps, 50.0) as usize,
            percentile_nearest_rank(&succ, 50.0),
            percentile_nearest_rank(&succ, 25.0),
            percentile_nearest_rank(&succ, 75.0),
        ));
    }
    write_file(&out_dir.join("sweep.csv"), &report)?;
    Ok(report)
}

/// Parses metrics.csv rows back into memory (used by sweeps and tests).
pub fn parse_metric_rows(text: &str) -> Vec<MetricRow> {
    text.lines()
        .skip(1)
        .filter_map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return None;
            }
            Some(MetricRow {
                env_step: f[0].parse().ok()?,
                episode: f[1].parse().ok()?,
                epsilon: f[2].parse().ok()?,
                loss_v: f[3].parse().ok()?,
                loss_qh: f[4].parse().ok()?,
                loss_ql: f[5].parse().ok()?,
                train_return: f[6].parse().ok()?,
                eval_return_mean: f[7].parse().ok()?,
                eval_success_rate: f[8].parse().ok()?,
                wall_ms: f[9].parse().ok()?,
            })
        })
        .collect()
}

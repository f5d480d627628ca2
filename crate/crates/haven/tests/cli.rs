//! End-to-end checks of the `haven` binary: flag precedence, exit codes,
//! artifact schemas, dump/sweep behavior. Budgets are tiny (climb-po,
//! a few hundred steps) so the whole file runs in seconds.

use std::path::Path;
use std::process::Command;

fn haven_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_haven"))
}

fn tiny_args(out: &Path) -> Vec<String> {
    [
        "train",
        "--algo",
        "haven-qmix",
        "--env",
        "climb-po",
        "--seed",
        "5",
        "--total-steps",
        "400",
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([out.display().to_string()])
    .collect()
}

#[test]
fn train_with_flags_only_uses_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let status = haven_bin().args(tiny_args(&out)).status().unwrap();
    assert!(status.success());
    for artifact in ["metrics.csv", "manifest", "checkpoint_final.txt", "policy_dump.csv"] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
    let manifest = std::fs::read_to_string(out.join("manifest")).unwrap();
    // flag-only run sits on the reference defaults
    assert!(manifest.contains("lr = 0.0005"));
    assert!(manifest.contains("batch_size = 32"));
    assert!(manifest.contains("buffer_capacity = 5000"));
    assert!(manifest.contains("k = 3"));
    assert!(manifest.contains("n_macro_actions = 8"));
    assert!(manifest.contains("algo = haven-qmix"));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with(
        "env_step,episode,epsilon,loss_v,loss_qh,loss_ql,train_return,eval_return_mean,eval_success_rate,wall_ms"
    ));
}

#[test]
fn unknown_ids_are_usage_errors() {
    let code = |args: &[&str]| {
        haven_bin()
            .args(args)
            .output()
            .unwrap()
            .status
            .code()
            .unwrap()
    };
    assert_eq!(
        code(&["train", "--algo", "ppo", "--out", "/tmp/x_haven_nope"]),
        1
    );
    assert_eq!(
        code(&["train", "--env", "starcraft", "--out", "/tmp/x_haven_nope"]),
        1
    );
    assert_eq!(code(&["train"]), 1, "missing --out should be a usage error");
    assert_eq!(code(&["frobnicate"]), 1);
}

#[test]
fn config_file_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("base.cfg");
    std::fs::write(
        &cfg_path,
        "[train]\nalgo = vdn\nseed = 1\ntotal_env_steps = 300\n\n[env]\nid = climb-po\n\n[eval]\ninterval = 150\nepisodes = 2\n",
    )
    .unwrap();
    let out = tmp.path().join("run");
    let status = haven_bin()
        .args([
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--algo",
            "qmix",
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = std::fs::read_to_string(out.join("manifest")).unwrap();
    assert!(manifest.contains("algo = qmix"), "flag should beat config");
    assert!(manifest.contains("seed = 9"));
    assert!(manifest.contains("total_env_steps = 300"), "config should beat default");
}

#[test]
fn dump_schema_and_segment_structure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert!(haven_bin().args(tiny_args(&out)).status().unwrap().success());

    let dump_path = tmp.path().join("dump.csv");
    let status = haven_bin()
        .args([
            "dump",
            "--checkpoint",
            out.join("checkpoint_final.txt").to_str().unwrap(),
            "--algo",
            "haven-qmix",
            "--env",
            "climb-po",
            "--episodes",
            "3",
            "--out",
            dump_path.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let dump = std::fs::read_to_string(&dump_path).unwrap();
    let mut lines = dump.lines();
    let header = lines.next().unwrap();
    // climb-po state_dim = 9
    assert_eq!(
        header,
        "episode,t,agent,macro_action,primitive_action,f0,f1,f2,f3,f4,f5,f6,f7,f8"
    );
    let mut per_episode_steps = std::collections::HashMap::new();
    let mut macro_by_segment: std::collections::HashMap<(usize, usize, usize), i64> =
        std::collections::HashMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 5 + 9);
        let episode: usize = f[0].parse().unwrap();
        let t: usize = f[1].parse().unwrap();
        let agent: usize = f[2].parse().unwrap();
        let macro_action: i64 = f[3].parse().unwrap();
        // greedy rollout of length L with n agents -> exactly L * n rows
        *per_episode_steps.entry((episode, agent)).or_insert(0usize) += 1;
        // the macro action is constant within each k-segment (k = 3)
        let key = (episode, agent, t / 3);
        if let Some(prev) = macro_by_segment.insert(key, macro_action) {
            assert_eq!(prev, macro_action, "macro changed inside a segment");
        }
    }
    let counts: Vec<usize> = per_episode_steps.values().copied().collect();
    // both agents of one episode contribute the same number of rows
    for episode in 0..3 {
        assert_eq!(
            per_episode_steps[&(episode, 0)],
            per_episode_steps[&(episode, 1)]
        );
    }
    assert!(counts.iter().all(|&c| (1..=4).contains(&c)), "climb-po episodes are 1..=4 steps");

    // mismatched environment is rejected (checkpoint/env spec mismatch)
    let bad = haven_bin()
        .args([
            "dump",
            "--checkpoint",
            out.join("checkpoint_final.txt").to_str().unwrap(),
            "--algo",
            "haven-qmix",
            "--env",
            "gather-then-deliver",
            "--out",
            tmp.path().join("bad.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(bad.status.code().unwrap(), 2);
}

#[test]
fn sweep_reports_percentiles_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("base.cfg");
    std::fs::write(
        &cfg_path,
        "[train]\nalgo = vdn\ntotal_env_steps = 240\n\n[env]\nid = climb-po\n\n[eval]\ninterval = 120\nepisodes = 2\n",
    )
    .unwrap();
    let run_sweep = |dir: &Path| {
        let status = haven_bin()
            .args([
                "sweep",
                "--config",
                cfg_path.to_str().unwrap(),
                "--seeds",
                "1,2,3",
                "--out",
                dir.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(dir.join("sweep.csv")).unwrap()
    };
    let a = run_sweep(&tmp.path().join("s1"));
    let b = run_sweep(&tmp.path().join("s2"));
    assert_eq!(a, b, "sweep reports differ across identical invocations");

    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "point,env_step,success_median,success_p25,success_p75"
    );
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 5);
        let (p25, med, p75): (f64, f64, f64) = (
            f[3].parse().unwrap(),
            f[2].parse().unwrap(),
            f[4].parse().unwrap(),
        );
        assert!(p25 <= med && med <= p75);
    }
    // per-seed artifacts exist
    for seed in [1, 2, 3] {
        assert!(tmp.path().join("s1").join(format!("seed_{seed}")).join("metrics.csv").exists());
    }
}

#[test]
fn sweep_rejects_single_seed() {
    let out = haven_bin()
        .args(["sweep", "--seeds", "1", "--out", "/tmp/x_haven_sweep"])
        .output()
        .unwrap();
    assert_eq!(out.status.code().unwrap(), 1);
}

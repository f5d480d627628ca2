//! Flat key = value configuration files with `[train]`, `[env]` and
//! `[eval]` sections.
//!
//! Grammar: lines are either blank, `# comment`, `[section]`, or
//! `key = value`. Unknown sections or keys are errors (they are almost
//! always typos). The parser must never panic, whatever the input; it
//! backs the CLI `--config` flag and a fuzz target.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::envs::ENV_IDS;
use crate::learner::TrainConfig;
use crate::learner::Variant;
use crate::nets::MixerKind;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown section `{0}`", .name)]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: key `{key}` outside any section")]
    NoSection { line: usize, key: String },
    #[error("line {line}: unknown key `{section}.{key}`")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// CLI algorithm ids and their (variant, mixer) pairs. The ablations run
/// on the QMIX base.
pub const ALGO_IDS: [&str; 7] = [
    "haven-qmix",
    "haven-vdn",
    "qmix",
    "vdn",
    "haven-i",
    "haven-e",
    "haven-b",
];

pub fn algo_to_variant(algo: &str) -> Option<(Variant, MixerKind)> {
    match algo {
        "haven-qmix" => Some((Variant::Haven, MixerKind::Qmix)),
        "haven-vdn" => Some((Variant::Haven, MixerKind::Vdn)),
        "qmix" => Some((Variant::Flat, MixerKind::Qmix)),
        "vdn" => Some((Variant::Flat, MixerKind::Vdn)),
        "haven-i" => Some((Variant::HavenI, MixerKind::Qmix)),
        "haven-e" => Some((Variant::HavenE, MixerKind::Qmix)),
        "haven-b" => Some((Variant::HavenB, MixerKind::Qmix)),
        _ => None,
    }
}

pub fn variant_to_algo(variant: Variant, mixer: MixerKind) -> &'static str {
    match (variant, mixer) {
        (Variant::Haven, MixerKind::Qmix) => "haven-qmix",
        (Variant::Haven, MixerKind::Vdn) => "haven-vdn",
        (Variant::Flat, MixerKind::Qmix) => "qmix",
        (Variant::Flat, MixerKind::Vdn) => "vdn",
        (Variant::HavenI, _) => "haven-i",
        (Variant::HavenE, _) => "haven-e",
        (Variant::HavenB, _) => "haven-b",
    }
}

/// Full run configuration: learner hyperparameters plus environment and
/// evaluation settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub env_id: String,
    pub n_agents: usize,
    /// switch-corridor only: per-step penalty subtracted from the reward.
    pub step_penalty: f64,
    /// Write real wall-clock milliseconds into metrics.csv. Off by
    /// default so that identical (config, seed) runs are byte-identical.
    pub wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            train: TrainConfig::default(),
            env_id: "gather-then-deliver".to_string(),
            n_agents: 2,
            step_penalty: 0.0,
            wall_clock: false,
        }
    }
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
        RunConfig::parse_str(&text)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(ConfigError::Syntax {
                        line,
                        text: trimmed.to_string(),
                    });
                };
                if !matches!(name, "train" | "env" | "eval") {
                    return Err(ConfigError::UnknownSection {
                        line,
                        name: name.to_string(),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: trimmed.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            let Some(section) = section.as_deref() else {
                return Err(ConfigError::NoSection {
                    line,
                    key: key.to_string(),
                });
            };
            self.apply_key(section, key, value, line)?;
        }
        Ok(())
    }

    fn apply_key(
        &mut self,
        section: &str,
        key: &str,
        value: &str,
        line: usize,
    ) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(
            key: &str,
            value: &str,
            line: usize,
        ) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e| ConfigError::BadValue {
                line,
                key: key.to_string(),
                reason: format!("{e}"),
            })
        }
        let t = &mut self.train;
        match (section, key) {
            ("train", "lr") => t.lr = parse(key, value, line)?,
            ("train", "rmsprop_alpha") => t.rmsprop_alpha = parse(key, value, line)?,
            ("train", "rmsprop_eps") => t.rmsprop_eps = parse(key, value, line)?,
            ("train", "target_update_episodes") => {
                t.target_update_episodes = parse(key, value, line)?
            }
            ("train", "grad_clip") => t.grad_clip = parse(key, value, line)?,
            ("train", "batch_size") => t.batch_size = parse(key, value, line)?,
            ("train", "buffer_capacity") => t.buffer_capacity = parse(key, value, line)?,
            ("train", "gamma") => {
                let g: f64 = parse(key, value, line)?;
                t.gamma_h = g;
                t.gamma_l = g;
            }
            ("train", "gamma_h") => t.gamma_h = parse(key, value, line)?,
            ("train", "gamma_l") => t.gamma_l = parse(key, value, line)?,
            ("train", "epsilon_start") => t.epsilon_start = parse(key, value, line)?,
            ("train", "epsilon_end") => t.epsilon_end = parse(key, value, line)?,
            ("train", "epsilon_anneal_steps") => {
                t.epsilon_anneal_steps = parse(key, value, line)?
            }
            ("train", "k") => t.k = parse(key, value, line)?,
            ("train", "n_macro_actions") => t.n_macro_actions = parse(key, value, line)?,
            ("train", "total_env_steps") => t.total_env_steps = parse(key, value, line)?,
            ("train", "seed") => t.seed = parse(key, value, line)?,
            ("train", "value_target_uses_target_net") => {
                t.value_target_uses_target_net = parse(key, value, line)?
            }
            ("train", "algo") => {
                let (variant, mixer) =
                    algo_to_variant(value).ok_or_else(|| ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        reason: format!("unknown algorithm `{value}`"),
                    })?;
                t.variant = variant;
                t.mixer = mixer;
            }
            ("train", "variant") => {
                t.variant = match value {
                    "haven" => Variant::Haven,
                    "haven-i" => Variant::HavenI,
                    "haven-e" => Variant::HavenE,
                    "haven-b" => Variant::HavenB,
                    "flat" => Variant::Flat,
                    _ => {
                        return Err(ConfigError::BadValue {
                            line,
                            key: key.to_string(),
                            reason: format!("unknown variant `{value}`"),
                        })
                    }
                }
            }
            ("train", "mixer") => {
                t.mixer = match value {
                    "vdn" => MixerKind::Vdn,
                    "qmix" => MixerKind::Qmix,
                    _ => {
                        return Err(ConfigError::BadValue {
                            line,
                            key: key.to_string(),
                            reason: format!("unknown mixer `{value}`"),
                        })
                    }
                }
            }
            ("env", "id") => self.env_id = value.to_string(),
            ("env", "n_agents") => self.n_agents = parse(key, value, line)?,
            ("env", "step_penalty") => self.step_penalty = parse(key, value, line)?,
            ("eval", "interval") => t.eval_interval = parse(key, value, line)?,
            ("eval", "episodes") => t.eval_episodes = parse(key, value, line)?,
            ("eval", "wall_clock") => self.wall_clock = parse(key, value, line)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    section: section.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.train;
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", t.lr));
        }
        if !(t.grad_clip.is_finite() && t.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", t.grad_clip));
        }
        if !(0.0..1.0).contains(&t.gamma_h) || !(0.0..1.0).contains(&t.gamma_l) {
            return bad(format!("discounts must be in [0, 1): {} / {}", t.gamma_h, t.gamma_l));
        }
        if !(0.0..=1.0).contains(&t.epsilon_start)
            || !(0.0..=1.0).contains(&t.epsilon_end)
            || t.epsilon_end > t.epsilon_start
        {
            return bad("epsilon schedule must satisfy 0 <= end <= start <= 1".to_string());
        }
        if t.epsilon_anneal_steps == 0 {
            return bad("epsilon_anneal_steps must be positive".to_string());
        }
        if !(t.rmsprop_alpha.is_finite() && (0.0..1.0).contains(&t.rmsprop_alpha)) {
            return bad(format!("rmsprop_alpha must be in [0, 1), got {}", t.rmsprop_alpha));
        }
        if !(t.rmsprop_eps.is_finite() && t.rmsprop_eps > 0.0) {
            return bad(format!("rmsprop_eps must be positive, got {}", t.rmsprop_eps));
        }
        if t.batch_size == 0 || t.buffer_capacity < t.batch_size {
            return bad(format!(
                "need buffer_capacity >= batch_size >= 1, got {} / {}",
                t.buffer_capacity, t.batch_size
            ));
        }
        if t.k == 0 || t.target_update_episodes == 0 {
            return bad("k and target_update_episodes must be positive".to_string());
        }
        if t.variant.hierarchical() && t.n_macro_actions == 0 {
            return bad("n_macro_actions must be positive".to_string());
        }
        if t.total_env_steps == 0 || t.eval_interval == 0 || t.eval_episodes == 0 {
            return bad("total_env_steps, eval interval and episodes must be positive".to_string());
        }
        if !self.step_penalty.is_finite() {
            return bad("step_penalty must be finite".to_string());
        }
        if !ENV_IDS.contains(&self.env_id.as_str()) {
            return bad(format!("unknown environment `{}`", self.env_id));
        }
        let agent_range = match self.env_id.as_str() {
            "climb-po" => 2..=2,
            _ => 2..=4,
        };
        if !agent_range.contains(&self.n_agents) {
            return bad(format!(
                "{} supports {:?} agents, got {}",
                self.env_id, agent_range, self.n_agents
            ));
        }
        Ok(())
    }

    /// Renders the effective configuration in the config-file grammar;
    /// the manifest embeds this so a run is reproducible from it alone.
    pub fn to_config_text(&self) -> String {
        let t = &self.train;
        format!(
            "[train]\n\
             variant = {}\n\
             mixer = {}\n\
             lr = {}\n\
             rmsprop_alpha = {}\n\
             rmsprop_eps = {}\n\
             target_update_episodes = {}\n\
             grad_clip = {}\n\
             batch_size = {}\n\
             buffer_capacity = {}\n\
             gamma_h = {}\n\
             gamma_l = {}\n\
             epsilon_start = {}\n\
             epsilon_end = {}\n\
             epsilon_anneal_steps = {}\n\
             k = {}\n\
             n_macro_actions = {}\n\
             total_env_steps = {}\n\
             seed = {}\n\
             value_target_uses_target_net = {}\n\
             \n\
             [env]\n\
             id = {}\n\
             n_agents = {}\n\
             step_penalty = {}\n\
             \n\
             [eval]\n\
             interval = {}\n\
             episodes = {}\n\
             wall_clock = {}\n",
            match t.variant {
                Variant::Haven => "haven",
                Variant::HavenI => "haven-i",
                Variant::HavenE => "haven-e",
                Variant::HavenB => "haven-b",
                Variant::Flat => "flat",
            },
            match t.mixer {
                MixerKind::Vdn => "vdn",
                MixerKind::Qmix => "qmix",
            },
            t.lr,
            t.rmsprop_alpha,
            t.rmsprop_eps,
            t.target_update_episodes,
            t.grad_clip,
            t.batch_size,
            t.buffer_capacity,
            t.gamma_h,
            t.gamma_l,
            t.epsilon_start,
            t.epsilon_end,
            t.epsilon_anneal_steps,
            t.k,
            t.n_macro_actions,
            t.total_env_steps,
            t.seed,
            t.value_target_uses_target_net,
            self.env_id,
            self.n_agents,
            self.step_penalty,
            t.eval_interval,
            t.eval_episodes,
            self.wall_clock,
        )
    }

    /// Builds the configured environment.
    pub fn make_env(&self) -> Box<dyn crate::envs::Env> {
        match self.env_id.as_str() {
            "switch-corridor" => Box::new(
                crate::envs::CorridorEnv::new(self.n_agents).with_step_penalty(self.step_penalty),
            ),
            other => crate::envs::make_env(other, self.n_agents)
                .unwrap_or_else(|| panic!("unvalidated env id `{other}`")),
        }
    }
}

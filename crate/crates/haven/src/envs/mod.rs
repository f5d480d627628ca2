//! Dec-POMDP environment abstraction and the built-in desk-scale tasks.
//!
//! All built-ins share the same contract: `n` agents observe local views of
//! a global state, act simultaneously on discrete primitive actions, and
//! receive one shared scalar reward. Episodes always end with
//! `terminated = true`, either by reaching the goal or by hitting the
//! episode limit. Each environment owns a seeded RNG stream (re-seeded on
//! every `reset`) that is independent from the learner's exploration
//! stream, so trajectories replay exactly.

mod chain;
mod climb;
mod corridor;
mod gather;

pub use chain::ChainEnv;
pub use climb::{ClimbEnv, CLIMB_PAYOFF};
pub use corridor::CorridorEnv;
pub use gather::GatherEnv;

use thiserror::Error;

/// Static description of a Dec-POMDP instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub episode_limit: usize,
}

impl EnvSpec {
    pub fn validate(&self) {
        assert!(self.n_agents >= 1);
        assert!(self.n_actions >= 1);
        assert!(self.obs_dim >= 1);
        assert!(self.state_dim >= 1);
        assert!(self.episode_limit >= 1);
        assert!(
            self.obs_dim <= self.state_dim,
            "observations must be local views of state: obs_dim {} > state_dim {}",
            self.obs_dim,
            self.state_dim
        );
    }
}

/// Diagnostic flags attached to a step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepInfo {
    /// The episode ended in task success (the win-rate stand-in).
    pub success: bool,
}

/// Outcome of one joint environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    /// Shared team reward.
    pub reward: f64,
    pub next_observations: Vec<Vec<f64>>,
    pub next_state: Vec<f64>,
    pub terminated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("agent {agent}: action {action} out of range (0..{n_actions})")]
    ActionOutOfRange {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    #[error("wrong joint action arity: got {got}, need {need}")]
    WrongArity { got: usize, need: usize },
    #[error("step called after episode termination; reset first")]
    Terminated,
    #[error("step called before reset")]
    NotReset,
}

pub trait Env {
    fn spec(&self) -> &EnvSpec;

    /// Starts a fresh episode. Deterministic per seed.
    fn reset(&mut self, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>);

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError>;
}

/// Validates a joint action against the spec and episode liveness flags.
fn check_step(
    spec: &EnvSpec,
    joint_action: &[usize],
    started: bool,
    terminated: bool,
) -> Result<(), EnvError> {
    if !started {
        return Err(EnvError::NotReset);
    }
    if terminated {
        return Err(EnvError::Terminated);
    }
    if joint_action.len() != spec.n_agents {
        return Err(EnvError::WrongArity {
            got: joint_action.len(),
            need: spec.n_agents,
        });
    }
    for (agent, &action) in joint_action.iter().enumerate() {
        if action >= spec.n_actions {
            return Err(EnvError::ActionOutOfRange {
                agent,
                action,
                n_actions: spec.n_actions,
            });
        }
    }
    Ok(())
}

/// Environment ids selectable from the CLI and config files.
pub const ENV_IDS: [&str; 3] = ["climb-po", "switch-corridor", "gather-then-deliver"];

/// Instantiates a built-in environment by id.
pub fn make_env(id: &str, n_agents: usize) -> Option<Box<dyn Env>> {
    match id {
        "climb-po" => Some(Box::new(ClimbEnv::new())),
        "switch-corridor" => Some(Box::new(CorridorEnv::new(n_agents))),
        "gather-then-deliver" => Some(Box::new(GatherEnv::new(n_agents))),
        _ => None,
    }
}

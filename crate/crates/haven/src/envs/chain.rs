use super::{check_step, Env, EnvError, EnvSpec, StepInfo, StepResult};

const LENGTH: usize = 3;
const EPISODE_LIMIT: usize = 10;

/// Single-agent deterministic 3-state chain: positions 0..2, start at 0,
/// action 0 moves left and 1 moves right (clamped at 0), reaching position
/// 2 pays 1 and terminates. Small enough for exact value iteration, which
/// is what the degenerate-equivalence tests need.
///
/// - observation (3): `onehot(position)`
/// - state (4): `[onehot(position), t / limit]`
pub struct ChainEnv {
    spec: EnvSpec,
    pos: usize,
    t: usize,
    started: bool,
    terminated: bool,
}

impl ChainEnv {
    pub fn new() -> ChainEnv {
        ChainEnv {
            spec: EnvSpec {
                n_agents: 1,
                n_actions: 2,
                obs_dim: LENGTH,
                state_dim: LENGTH + 1,
                episode_limit: EPISODE_LIMIT,
            },
            pos: 0,
            t: 0,
            started: false,
            terminated: false,
        }
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        let mut o = vec![0.0; LENGTH];
        o[self.pos] = 1.0;
        vec![o]
    }

    fn state(&self) -> Vec<f64> {
        let mut s = vec![0.0; LENGTH + 1];
        s[self.pos] = 1.0;
        s[LENGTH] = self.t as f64 / EPISODE_LIMIT as f64;
        s
    }
}

impl Default for ChainEnv {
    fn default() -> Self {
        ChainEnv::new()
    }
}

impl Env for ChainEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.pos = 0;
        self.t = 0;
        self.started = true;
        self.terminated = false;
        (self.state(), self.observations())
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        check_step(&self.spec, joint_action, self.started, self.terminated)?;
        match joint_action[0] {
            0 => self.pos = self.pos.saturating_sub(1),
            _ => self.pos += 1,
        }
        self.t += 1;
        let success = self.pos == LENGTH - 1;
        let reward = if success { 1.0 } else { 0.0 };
        self.terminated = success || self.t >= EPISODE_LIMIT;
        Ok(StepResult {
            reward,
            next_observations: self.observations(),
            next_state: self.state(),
            terminated: self.terminated,
            info: StepInfo { success },
        })
    }
}

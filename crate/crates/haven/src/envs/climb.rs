use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{check_step, Env, EnvError, EnvSpec, StepInfo, StepResult};

/// Classic climb-game payoff matrix, row = agent 0's action, column =
/// agent 1's. The cooperative optimum (0, 0) pays 11 next to the severe
/// miscoordination penalty -30.
pub const CLIMB_PAYOFF: [[f64; 3]; 3] = [
    [11.0, -30.0, 0.0],
    [-30.0, 7.0, 6.0],
    [0.0, 0.0, 5.0],
];

const N_AGENTS: usize = 2;
const N_ACTIONS: usize = 3;
const EPISODE_LIMIT: usize = 4;

/// Partially observable repeated climb matrix game.
///
/// The matrix game is played for up to `episode_limit` rounds; hitting the
/// cooperative optimum (both agents play 0, reward 11) ends the episode in
/// success. Each agent observes only the one-hot of its own previous
/// action plus one uniform noise bit, redrawn from the environment RNG
/// stream every step (agent 0's bit first, then agent 1's).
///
/// Layouts, which the enumeration oracles in the test suite mirror:
/// - observation (4): `[onehot(own last action; zeros on round 0), noise_bit]`
/// - state (9): `[onehot(a0 last), onehot(a1 last), t / limit, noise_0, noise_1]`
pub struct ClimbEnv {
    spec: EnvSpec,
    rng: ChaCha12Rng,
    last_actions: Option<[usize; 2]>,
    noise: [f64; 2],
    t: usize,
    started: bool,
    terminated: bool,
}

impl ClimbEnv {
    pub fn new() -> ClimbEnv {
        ClimbEnv {
            spec: EnvSpec {
                n_agents: N_AGENTS,
                n_actions: N_ACTIONS,
                obs_dim: 4,
                state_dim: 9,
                episode_limit: EPISODE_LIMIT,
            },
            rng: ChaCha12Rng::seed_from_u64(0),
            last_actions: None,
            noise: [0.0; 2],
            t: 0,
            started: false,
            terminated: false,
        }
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..N_AGENTS)
            .map(|a| {
                let mut obs = vec![0.0; 4];
                if let Some(last) = self.last_actions {
                    obs[last[a]] = 1.0;
                }
                obs[3] = self.noise[a];
                obs
            })
            .collect()
    }

    fn state(&self) -> Vec<f64> {
        let mut s = vec![0.0; 9];
        if let Some(last) = self.last_actions {
            s[last[0]] = 1.0;
            s[3 + last[1]] = 1.0;
        }
        s[6] = self.t as f64 / EPISODE_LIMIT as f64;
        s[7] = self.noise[0];
        s[8] = self.noise[1];
        s
    }

    fn draw_noise(&mut self) {
        for bit in self.noise.iter_mut() {
            *bit = if self.rng.random::<f64>() < 0.5 { 0.0 } else { 1.0 };
        }
    }
}

impl Default for ClimbEnv {
    fn default() -> Self {
        ClimbEnv::new()
    }
}

impl Env for ClimbEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.rng = ChaCha12Rng::seed_from_u64(seed);
        self.last_actions = None;
        self.t = 0;
        self.started = true;
        self.terminated = false;
        self.draw_noise();
        (self.state(), self.observations())
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        check_step(&self.spec, joint_action, self.started, self.terminated)?;
        let (a0, a1) = (joint_action[0], joint_action[1]);
        let reward = CLIMB_PAYOFF[a0][a1];
        self.last_actions = Some([a0, a1]);
        self.t += 1;
        self.draw_noise();

        let success = reward == 11.0;
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

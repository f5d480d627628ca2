use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{check_step, Env, EnvError, EnvSpec, StepInfo, StepResult};

const W: usize = 5;
const H: usize = 5;
const DEPOT: (usize, usize) = (2, 2);
const ITEM_CELLS: [(usize, usize); 4] = [(2, 0), (0, 2), (4, 2), (2, 4)];
const SPAWN_POOL: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];
const EPISODE_LIMIT: usize = 24;
const N_ACTIONS: usize = 6; // stay, up, down, left, right, interact
const DELIVERY_REWARD: f64 = 10.0;

/// Gather-then-deliver on a 5x5 grid.
///
/// One item per agent sits at a fixed cell away from the spawn block; the
/// depot is the center. Walking onto an item cell picks the item up
/// automatically (one carried at a time); a carrying agent on the depot
/// delivers with the interact action, paying the shared reward 10. The
/// episode succeeds once every item has been delivered. The task is
/// two-phase by construction - fetch, then deliver - which is where a
/// k-step macro policy helps.
///
/// Agents spawn in the top-left block, drawn without replacement from a
/// fixed pool by the environment RNG; dynamics are otherwise
/// deterministic. Agents may share cells.
///
/// Layouts:
/// - observation (39): 3x3 window, row-major (dy then dx), channels
///   `[blocked, item, depot, other_agent]` per cell, then
///   `[carrying, x/(W-1), y/(H-1)]`.
/// - state (52 + n): per-cell agent count (25), per-cell item map (25),
///   per-agent carrying flag (n), delivered fraction, `t / limit`.
pub struct GatherEnv {
    spec: EnvSpec,
    rng: ChaCha12Rng,
    positions: Vec<(usize, usize)>,
    items: Vec<Option<(usize, usize)>>,
    carrying: Vec<bool>,
    delivered: usize,
    t: usize,
    started: bool,
    terminated: bool,
}

impl GatherEnv {
    pub fn new(n_agents: usize) -> GatherEnv {
        assert!(
            (2..=4).contains(&n_agents),
            "gather-then-deliver supports 2..=4 agents, got {n_agents}"
        );
        GatherEnv {
            spec: EnvSpec {
                n_agents,
                n_actions: N_ACTIONS,
                obs_dim: 9 * 4 + 3,
                state_dim: 2 * W * H + n_agents + 2,
                episode_limit: EPISODE_LIMIT,
            },
            rng: ChaCha12Rng::seed_from_u64(0),
            positions: Vec::new(),
            items: Vec::new(),
            carrying: Vec::new(),
            delivered: 0,
            t: 0,
            started: false,
            terminated: false,
        }
    }

    fn n_items(&self) -> usize {
        self.spec.n_agents
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.spec.n_agents)
            .map(|a| {
                let (ax, ay) = self.positions[a];
                let mut obs = Vec::with_capacity(self.spec.obs_dim);
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (cx, cy) = (ax as isize + dx, ay as isize + dy);
                        let off_grid =
                            cx < 0 || cy < 0 || cx as usize >= W || cy as usize >= H;
                        obs.push(if off_grid { 1.0 } else { 0.0 });
                        if off_grid {
                            obs.extend_from_slice(&[0.0, 0.0, 0.0]);
                            continue;
                        }
                        let cell = (cx as usize, cy as usize);
                        let item = self.items.contains(&Some(cell));
                        obs.push(if item { 1.0 } else { 0.0 });
                        obs.push(if cell == DEPOT { 1.0 } else { 0.0 });
                        let other = self
                            .positions
                            .iter()
                            .enumerate()
                            .any(|(b, &p)| b != a && p == cell);
                        obs.push(if other { 1.0 } else { 0.0 });
                    }
                }
                obs.push(if self.carrying[a] { 1.0 } else { 0.0 });
                obs.push(ax as f64 / (W - 1) as f64);
                obs.push(ay as f64 / (H - 1) as f64);
                obs
            })
            .collect()
    }

    fn state(&self) -> Vec<f64> {
        let n = self.spec.n_agents;
        let mut s = vec![0.0; self.spec.state_dim];
        for &(x, y) in &self.positions {
            s[y * W + x] += 1.0;
        }
        for item in self.items.iter().flatten() {
            s[W * H + item.1 * W + item.0] = 1.0;
        }
        for a in 0..n {
            s[2 * W * H + a] = if self.carrying[a] { 1.0 } else { 0.0 };
        }
        s[2 * W * H + n] = self.delivered as f64 / self.n_items() as f64;
        s[2 * W * H + n + 1] = self.t as f64 / EPISODE_LIMIT as f64;
        s
    }
}

impl Env for GatherEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.rng = ChaCha12Rng::seed_from_u64(seed);
        let mut pool = SPAWN_POOL;
        pool.shuffle(&mut self.rng);
        self.positions = pool[..self.spec.n_agents].to_vec();
        self.items = ITEM_CELLS[..self.n_items()].iter().map(|&c| Some(c)).collect();
        self.carrying = vec![false; self.spec.n_agents];
        self.delivered = 0;
        self.t = 0;
        self.started = true;
        self.terminated = false;
        (self.state(), self.observations())
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        check_step(&self.spec, joint_action, self.started, self.terminated)?;
        let mut reward = 0.0;
        for (a, &action) in joint_action.iter().enumerate() {
            let (x, y) = self.positions[a];
            match action {
                1 if y > 0 => self.positions[a] = (x, y - 1),
                2 if y + 1 < H => self.positions[a] = (x, y + 1),
                3 if x > 0 => self.positions[a] = (x - 1, y),
                4 if x + 1 < W => self.positions[a] = (x + 1, y),
                5 if self.carrying[a] && self.positions[a] == DEPOT => {
                    self.carrying[a] = false;
                    self.delivered += 1;
                    reward += DELIVERY_REWARD;
                }
                _ => {}
            }
            // walking onto an item picks it up
            if !self.carrying[a] {
                let here = self.positions[a];
                if let Some(slot) = self.items.iter().position(|&i| i == Some(here)) {
                    self.items[slot] = None;
                    self.carrying[a] = true;
                }
            }
        }
        self.t += 1;

        let success = self.delivered == self.n_items();
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

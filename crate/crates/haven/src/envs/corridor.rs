use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{check_step, Env, EnvError, EnvSpec, StepInfo, StepResult};

const W: usize = 7;
const H: usize = 3;
const DOOR: (usize, usize) = (3, 1);
const SWITCH: (usize, usize) = (0, 0);
const GOAL_MIN_X: usize = 5;
const EPISODE_LIMIT: usize = 30;
const N_ACTIONS: usize = 5; // stay, up, down, left, right

const SPAWN_POOL: [(usize, usize); 6] = [(1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)];

/// Switch-and-door corridor on a 7x3 grid.
///
/// Column 3 is a wall except for the door cell (3, 1), which stays closed
/// until some agent steps on the switch at (0, 0); the door then latches
/// open for the rest of the episode. The team succeeds (shared reward 1,
/// episode ends) once every agent stands in the goal columns x >= 5. Agents
/// spawn on the left block, drawn without replacement from a fixed pool by
/// the environment RNG. Movement resolves in agent-index order and agents
/// block each other.
///
/// Layouts:
/// - observation (29): 3x3 window around the agent, cells in row-major
///   order (dy then dx), channels `[blocked, switch, other_agent]` per
///   cell, then `[x/(W-1), y/(H-1)]`. Out-of-bounds counts as blocked; the
///   closed door counts as blocked.
/// - state (43): per-cell agent count (21, row-major y then x), per-cell
///   blocked map including door state (21), `t / limit`.
pub struct CorridorEnv {
    spec: EnvSpec,
    rng: ChaCha12Rng,
    step_penalty: f64,
    positions: Vec<(usize, usize)>,
    door_open: bool,
    t: usize,
    started: bool,
    terminated: bool,
}

impl CorridorEnv {
    pub fn new(n_agents: usize) -> CorridorEnv {
        assert!(
            (2..=4).contains(&n_agents),
            "switch-corridor supports 2..=4 agents, got {n_agents}"
        );
        CorridorEnv {
            spec: EnvSpec {
                n_agents,
                n_actions: N_ACTIONS,
                obs_dim: 9 * 3 + 2,
                state_dim: 2 * W * H + 1,
                episode_limit: EPISODE_LIMIT,
            },
            rng: ChaCha12Rng::seed_from_u64(0),
            step_penalty: 0.0,
            positions: Vec::new(),
            door_open: false,
            t: 0,
            started: false,
            terminated: false,
        }
    }

    /// Per-step penalty subtracted from the shared reward (0 by default).
    pub fn with_step_penalty(mut self, p: f64) -> CorridorEnv {
        self.step_penalty = p;
        self
    }

    fn is_wall(x: usize, y: usize) -> bool {
        x == DOOR.0 && (x, y) != DOOR
    }

    fn blocked(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x as usize >= W || y as usize >= H {
            return true;
        }
        let (x, y) = (x as usize, y as usize);
        if Self::is_wall(x, y) {
            return true;
        }
        (x, y) == DOOR && !self.door_open
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.spec.n_agents)
            .map(|a| {
                let (ax, ay) = self.positions[a];
                let mut obs = Vec::with_capacity(self.spec.obs_dim);
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (cx, cy) = (ax as isize + dx, ay as isize + dy);
                        obs.push(if self.blocked(cx, cy) { 1.0 } else { 0.0 });
                        let on_grid = cx >= 0 && cy >= 0 && (cx as usize) < W && (cy as usize) < H;
                        obs.push(
                            if on_grid && (cx as usize, cy as usize) == SWITCH {
                                1.0
                            } else {
                                0.0
                            },
                        );
                        let other = on_grid
                            && self.positions.iter().enumerate().any(|(b, &p)| {
                                b != a && p == (cx as usize, cy as usize)
                            });
                        obs.push(if other { 1.0 } else { 0.0 });
                    }
                }
                obs.push(ax as f64 / (W - 1) as f64);
                obs.push(ay as f64 / (H - 1) as f64);
                obs
            })
            .collect()
    }

    fn state(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.spec.state_dim];
        for &(x, y) in &self.positions {
            s[y * W + x] += 1.0;
        }
        for y in 0..H {
            for x in 0..W {
                if self.blocked(x as isize, y as isize) {
                    s[W * H + y * W + x] = 1.0;
                }
            }
        }
        s[2 * W * H] = self.t as f64 / EPISODE_LIMIT as f64;
        s
    }
}

impl Env for CorridorEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.rng = ChaCha12Rng::seed_from_u64(seed);
        let mut pool = SPAWN_POOL;
        pool.shuffle(&mut self.rng);
        self.positions = pool[..self.spec.n_agents].to_vec();
        self.door_open = false;
        self.t = 0;
        self.started = true;
        self.terminated = false;
        (self.state(), self.observations())
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        check_step(&self.spec, joint_action, self.started, self.terminated)?;
        for (a, &action) in joint_action.iter().enumerate() {
            let (x, y) = self.positions[a];
            let (tx, ty) = match action {
                1 => (x as isize, y as isize - 1),
                2 => (x as isize, y as isize + 1),
                3 => (x as isize - 1, y as isize),
                4 => (x as isize + 1, y as isize),
                _ => (x as isize, y as isize),
            };
            let occupied = self
                .positions
                .iter()
                .enumerate()
                .any(|(b, &p)| b != a && p == (tx as usize, ty as usize));
            if !self.blocked(tx, ty) && !occupied {
                self.positions[a] = (tx as usize, ty as usize);
            }
            if self.positions[a] == SWITCH {
                self.door_open = true;
            }
        }
        self.t += 1;

        let success = self.positions.iter().all(|&(x, _)| x >= GOAL_MIN_X);
        let reward = if success { 1.0 } else { 0.0 } - self.step_penalty;
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

#[cfg(test)]
mod tests {
    use super::*;

    fn positions(env: &CorridorEnv) -> Vec<(usize, usize)> {
        env.positions.clone()
    }

    #[test]
    fn wall_bump_leaves_position_unchanged_reward_zero() {
        let mut env = CorridorEnv::new(2);
        env.reset(0);
        // drive agent 0 into the top boundary repeatedly
        let before = positions(&env);
        let r = env.step(&[1, 0]).unwrap();
        let after = positions(&env);
        if before[0].1 == 0 {
            assert_eq!(before[0], after[0]);
        }
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn door_blocks_until_switch_pressed() {
        let mut env = CorridorEnv::new(2);
        env.reset(0);
        assert!(env.blocked(DOOR.0 as isize, DOOR.1 as isize));
        // walk agent 0 to the switch: down-left sweep
        for _ in 0..8 {
            env.step(&[3, 0]).unwrap();
        }
        for _ in 0..4 {
            env.step(&[1, 0]).unwrap();
        }
        assert_eq!(positions(&env)[0], SWITCH);
        assert!(env.door_open);
        assert!(!env.blocked(DOOR.0 as isize, DOOR.1 as isize));
    }

    #[test]
    fn scripted_cooperation_succeeds() {
        let mut env = CorridorEnv::new(2);
        env.reset(3);
        // agent 0 presses the switch, then both head right through the door
        let mut last = None;
        let mut trace = Vec::new();
        for _ in 0..EPISODE_LIMIT {
            let acts = script(&env);
            trace.push((positions(&env), acts.clone(), env.door_open));
            let r = env.step(&acts).unwrap();
            let done = r.terminated;
            last = Some(r);
            if done {
                break;
            }
        }
        let last = last.unwrap();
        assert!(last.info.success, "script failed: trace {trace:?}");
        assert_eq!(last.reward, 1.0);

        fn script(env: &CorridorEnv) -> Vec<usize> {
            let door_open = env.door_open;
            env.positions
                .iter()
                .enumerate()
                .map(|(a, &(x, y))| {
                    if a == 0 && !door_open {
                        // head to the switch at (0, 0), left wall first so the
                        // route cannot collide with agent 1 waiting at the door
                        if x > 0 {
                            3
                        } else if y > 0 {
                            1
                        } else {
                            0
                        }
                    } else if x >= GOAL_MIN_X {
                        // clear the door lane for agents still coming through
                        if x + 1 < W {
                            4
                        } else {
                            0
                        }
                    } else if y != DOOR.1 {
                        if y < DOOR.1 {
                            2
                        } else {
                            1
                        }
                    } else {
                        4
                    }
                })
                .collect()
        }
    }
}

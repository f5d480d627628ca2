//! Two-timescale control: macro decisions every `k` steps conditioning the
//! per-step primitive policy, macro-segment rewards, and the advantage-based
//! intrinsic reward that links the two levels.
//!
//! Intrinsic rewards never touch the replay buffer; they are recomputed from
//! the current value function on every training pass.

use haven_tensor::{no_grad, Tensor};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::nets::RecurrentAgentNet;

/// Tracks low-level time `t` and the derived macro step `T = floor(t / k)`.
#[derive(Debug, Clone, Copy)]
pub struct MacroClock {
    pub k: usize,
    pub t: usize,
}

impl MacroClock {
    pub fn new(k: usize) -> MacroClock {
        assert!(k >= 1, "macro period k must be positive");
        MacroClock { k, t: 0 }
    }

    pub fn macro_step(&self) -> usize {
        self.t / self.k
    }

    /// True exactly when a new macro action is due.
    pub fn at_boundary(&self) -> bool {
        self.t.is_multiple_of(self.k)
    }

    pub fn advance(&mut self) {
        self.t += 1;
    }
}

/// Widths and assembly of agent-net inputs.
///
/// High-level input: `[obs, onehot(previous macro action), onehot(agent)]`.
/// Low-level input: `[obs, onehot(current macro action), onehot(previous
/// primitive action), onehot(agent)]`. Missing one-hots (episode start, or
/// the macro block when `n_macro == 0` for flat variants) are zeros.
#[derive(Debug, Clone, Copy)]
pub struct InputLayout {
    pub obs_dim: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    /// Number of macro actions; 0 disables the hierarchy (flat baseline).
    pub n_macro: usize,
}

impl InputLayout {
    pub fn high_dim(&self) -> usize {
        self.obs_dim + self.n_macro + self.n_agents
    }

    pub fn low_dim(&self) -> usize {
        self.obs_dim + self.n_macro + self.n_actions + self.n_agents
    }

    pub fn high_input(&self, obs: &[f64], prev_macro: Option<usize>, agent: usize) -> Vec<f64> {
        debug_assert_eq!(obs.len(), self.obs_dim);
        let mut x = Vec::with_capacity(self.high_dim());
        x.extend_from_slice(obs);
        push_onehot(&mut x, self.n_macro, prev_macro);
        push_onehot(&mut x, self.n_agents, Some(agent));
        x
    }

    pub fn low_input(
        &self,
        obs: &[f64],
        macro_action: Option<usize>,
        prev_action: Option<usize>,
        agent: usize,
    ) -> Vec<f64> {
        debug_assert_eq!(obs.len(), self.obs_dim);
        let mut x = Vec::with_capacity(self.low_dim());
        x.extend_from_slice(obs);
        push_onehot(&mut x, self.n_macro, macro_action);
        push_onehot(&mut x, self.n_actions, prev_action);
        push_onehot(&mut x, self.n_agents, Some(agent));
        x
    }
}

fn push_onehot(buf: &mut Vec<f64>, width: usize, index: Option<usize>) {
    let start = buf.len();
    buf.resize(start + width, 0.0);
    if let Some(i) = index {
        assert!(i < width, "one-hot index {i} out of width {width}");
        buf[start + i] = 1.0;
    }
}

/// Sum of one macro segment's external rewards (`R_T`). The final segment
/// of an episode may be shorter than `k`; the sum runs over the rewards
/// actually present.
pub fn high_level_reward(segment_rewards: &[f64]) -> f64 {
    assert!(
        !segment_rewards.is_empty(),
        "macro segment must contain at least one reward"
    );
    segment_rewards.iter().sum()
}

/// One-sample advantage estimate for a macro transition:
/// `A_h = R_T + gamma_h * V(s_{T+1}) - V(s_T)`, with the successor term
/// dropped on terminal segments.
pub fn advantage(r_macro: f64, v_s: f64, v_next: f64, terminal: bool, gamma_h: f64) -> f64 {
    let bootstrap = if terminal { 0.0 } else { gamma_h * v_next };
    r_macro + bootstrap - v_s
}

/// Spreads a macro advantage evenly over the segment's low-level steps.
/// The divisor is the nominal `k` even when the final segment is shorter,
/// so the per-step reward scale is identical across segments.
pub fn intrinsic_rewards(advantage: f64, segment_len: usize, k: usize) -> Vec<f64> {
    assert!(
        segment_len >= 1 && segment_len <= k,
        "segment length {segment_len} outside 1..={k}"
    );
    vec![advantage / k as f64; segment_len]
}

/// The scalar coefficient `1 + (1 - gamma_l^k) / (k (1 - gamma_l))` from the
/// low-level policy-improvement bound; strictly greater than 1 for
/// `gamma_l` in (0, 1) and `k >= 1`. Exposed as a diagnostic only.
pub fn monotonic_coefficient(gamma_l: f64, k: usize) -> f64 {
    assert!((0.0..1.0).contains(&gamma_l) && gamma_l > 0.0);
    assert!(k >= 1);
    1.0 + (1.0 - gamma_l.powi(k as i32)) / (k as f64 * (1.0 - gamma_l))
}

/// Epsilon-greedy pick over one agent's score row. Exploration consumes a
/// coin and (only when exploring) one action draw, keeping RNG streams
/// replayable; exploitation breaks ties toward the lowest index.
fn eps_greedy(scores: &[f64], epsilon: f64, rng: &mut ChaCha12Rng) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return rng.random_range(0..scores.len());
    }
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in scores.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Per-episode action selector holding the recurrent hidden state of both
/// levels. One controller per rollout; create a fresh one at episode start.
pub struct Controller {
    layout: InputLayout,
    clock: MacroClock,
    macro_hidden: Option<Tensor>,
    low_hidden: Tensor,
    current_macro: Vec<Option<usize>>,
    prev_macro: Vec<Option<usize>>,
    prev_action: Vec<Option<usize>>,
}

/// Actions chosen for one environment step.
pub struct ChosenActions {
    /// Set only on macro boundaries (`t mod k == 0`).
    pub macro_actions: Option<Vec<usize>>,
    pub primitive_actions: Vec<usize>,
}

impl Controller {
    pub fn new(layout: InputLayout, k: usize, macro_net: Option<&RecurrentAgentNet>, low_net: &RecurrentAgentNet) -> Controller {
        let n = layout.n_agents;
        Controller {
            layout,
            clock: MacroClock::new(k),
            macro_hidden: macro_net.map(|m| m.initial_hidden(n)),
            low_hidden: low_net.initial_hidden(n),
            current_macro: vec![None; n],
            prev_macro: vec![None; n],
            prev_action: vec![None; n],
        }
    }

    pub fn clock(&self) -> &MacroClock {
        &self.clock
    }

    /// Current macro action per agent (None before the first boundary or
    /// for flat variants).
    pub fn current_macro(&self) -> &[Option<usize>] {
        &self.current_macro
    }

    /// Selects actions for the current step and advances the clock and
    /// hidden states. `epsilon` drives both levels.
    pub fn act(
        &mut self,
        macro_net: Option<&RecurrentAgentNet>,
        low_net: &RecurrentAgentNet,
        observations: &[Vec<f64>],
        epsilon: f64,
        rng: &mut ChaCha12Rng,
    ) -> ChosenActions {
        assert!((0.0..=1.0).contains(&epsilon), "epsilon {epsilon} out of [0, 1]");
        let n = self.layout.n_agents;
        assert_eq!(observations.len(), n);

        let macro_actions = no_grad(|| {
            macro_net.and_then(|net| {
                if !self.clock.at_boundary() {
                    return None;
                }
                let mut rows = Vec::with_capacity(n * self.layout.high_dim());
                for (a, obs) in observations.iter().enumerate() {
                    rows.extend(self.layout.high_input(obs, self.current_macro[a], a));
                }
                let x = Tensor::from_vec(rows, &[n, self.layout.high_dim()]);
                let (scores, h) = net.step(&x, self.macro_hidden.as_ref().unwrap());
                self.macro_hidden = Some(h);
                let sv = scores.to_vec();
                let width = self.layout.n_macro;
                let picked: Vec<usize> = (0..n)
                    .map(|a| eps_greedy(&sv[a * width..(a + 1) * width], epsilon, rng))
                    .collect();
                self.prev_macro = self.current_macro.clone();
                self.current_macro = picked.iter().map(|&m| Some(m)).collect();
                Some(picked)
            })
        });

        let primitive_actions = no_grad(|| {
            let mut rows = Vec::with_capacity(n * self.layout.low_dim());
            for (a, obs) in observations.iter().enumerate() {
                rows.extend(self.layout.low_input(
                    obs,
                    self.current_macro[a],
                    self.prev_action[a],
                    a,
                ));
            }
            let x = Tensor::from_vec(rows, &[n, self.layout.low_dim()]);
            let (scores, h) = low_net.step(&x, &self.low_hidden);
            self.low_hidden = h;
            let sv = scores.to_vec();
            let width = self.layout.n_actions;
            (0..n)
                .map(|a| eps_greedy(&sv[a * width..(a + 1) * width], epsilon, rng))
                .collect::<Vec<usize>>()
        });

        self.prev_action = primitive_actions.iter().map(|&a| Some(a)).collect();
        self.clock.advance();
        ChosenActions {
            macro_actions,
            primitive_actions,
        }
    }
}

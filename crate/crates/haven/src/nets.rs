//! The five network families: recurrent agent nets for macro, value and
//! low-level policies, plus the mixing networks joining per-agent values
//! into team values.
//!
//! All agents of one level share one agent net; the agent-id one-hot in
//! the input is what distinguishes them. Mixers are either a parameter-free
//! sum (VDN) or a state-conditioned monotonic hypernetwork (QMIX style);
//! both keep per-agent argmaxes consistent with the joint argmax.

use haven_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub const QMIX_EMBED: usize = 32;
pub const QMIX_HYPER_HIDDEN: usize = 64;
pub const AGENT_HIDDEN: usize = 64;

fn uniform_init(rng: &mut ChaCha12Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn new(rng: &mut ChaCha12Rng, fan_in: usize, fan_out: usize) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: Tensor::param(uniform_init(rng, fan_in * fan_out, bound), &[fan_in, fan_out]),
            b: Tensor::param(uniform_init(rng, fan_out, bound), &[fan_out]),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        x.matmul(&self.w).add(&self.b)
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

pub struct GruCell {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
    hidden: usize,
}

impl GruCell {
    fn new(rng: &mut ChaCha12Rng, input: usize, hidden: usize) -> GruCell {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruCell {
            w_ih: Tensor::param(uniform_init(rng, input * 3 * hidden, bound), &[input, 3 * hidden]),
            w_hh: Tensor::param(uniform_init(rng, hidden * 3 * hidden, bound), &[hidden, 3 * hidden]),
            b_ih: Tensor::param(uniform_init(rng, 3 * hidden, bound), &[3 * hidden]),
            b_hh: Tensor::param(uniform_init(rng, 3 * hidden, bound), &[3 * hidden]),
            hidden,
        }
    }

    /// One recurrent step over a batch of rows.
    fn step(&self, x: &Tensor, h: &Tensor) -> Tensor {
        let hd = self.hidden;
        let gi = x.matmul(&self.w_ih).add(&self.b_ih);
        let gh = h.matmul(&self.w_hh).add(&self.b_hh);
        let reset = gi.slice_last(0, hd).add(&gh.slice_last(0, hd)).sigmoid();
        let update = gi.slice_last(hd, hd).add(&gh.slice_last(hd, hd)).sigmoid();
        let new = gi
            .slice_last(2 * hd, hd)
            .add(&reset.mul(&gh.slice_last(2 * hd, hd)))
            .tanh();
        // h' = (1 - z) * n + z * h
        new.add(&update.mul(&h.sub(&new)))
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w_ih"), self.w_ih.clone()));
        out.push((format!("{prefix}.w_hh"), self.w_hh.clone()));
        out.push((format!("{prefix}.b_ih"), self.b_ih.clone()));
        out.push((format!("{prefix}.b_hh"), self.b_hh.clone()));
    }
}

/// DRQN-style agent network: dense-in, gated recurrent cell, dense-out.
/// Scores one value per action (or a single state value when
/// `output_dim == 1`).
pub struct RecurrentAgentNet {
    fc_in: Linear,
    gru: GruCell,
    fc_out: Linear,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl RecurrentAgentNet {
    pub fn new(rng: &mut ChaCha12Rng, input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        RecurrentAgentNet {
            fc_in: Linear::new(rng, input_dim, hidden_dim),
            gru: GruCell::new(rng, hidden_dim, hidden_dim),
            fc_out: Linear::new(rng, hidden_dim, output_dim),
            input_dim,
            hidden_dim,
            output_dim,
        }
    }

    /// Fresh zero hidden state for `rows` parallel sequences.
    pub fn initial_hidden(&self, rows: usize) -> Tensor {
        Tensor::zeros(&[rows, self.hidden_dim])
    }

    /// Advances one step: `(scores, next_hidden)`.
    pub fn step(&self, input: &Tensor, hidden: &Tensor) -> (Tensor, Tensor) {
        assert_eq!(
            input.shape().last(),
            Some(&self.input_dim),
            "agent net input width {:?}, expected {}",
            input.shape(),
            self.input_dim
        );
        let x = self.fc_in.forward(input).relu();
        let h = self.gru.step(&x, hidden);
        let scores = self.fc_out.forward(&h);
        (scores, h)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.fc_in.named("fc_in", &mut out);
        self.gru.named("gru", &mut out);
        self.fc_out.named("fc_out", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    /// Detached copy for target networks.
    pub fn clone_detached(&self) -> RecurrentAgentNet {
        let copy = |src: &RecurrentAgentNet| RecurrentAgentNet {
            fc_in: Linear {
                w: Tensor::param(src.fc_in.w.to_vec(), src.fc_in.w.shape()),
                b: Tensor::param(src.fc_in.b.to_vec(), src.fc_in.b.shape()),
            },
            gru: GruCell {
                w_ih: Tensor::param(src.gru.w_ih.to_vec(), src.gru.w_ih.shape()),
                w_hh: Tensor::param(src.gru.w_hh.to_vec(), src.gru.w_hh.shape()),
                b_ih: Tensor::param(src.gru.b_ih.to_vec(), src.gru.b_ih.shape()),
                b_hh: Tensor::param(src.gru.b_hh.to_vec(), src.gru.b_hh.shape()),
                hidden: src.gru.hidden,
            },
            fc_out: Linear {
                w: Tensor::param(src.fc_out.w.to_vec(), src.fc_out.w.shape()),
                b: Tensor::param(src.fc_out.b.to_vec(), src.fc_out.b.shape()),
            },
            input_dim: src.input_dim,
            hidden_dim: src.hidden_dim,
            output_dim: src.output_dim,
        };
        copy(self)
    }

    /// Overwrites this net's parameters with `other`'s values.
    pub fn copy_from(&self, other: &RecurrentAgentNet) {
        for ((_, dst), (_, src)) in self.named_params().iter().zip(other.named_params()) {
            dst.set_values(&src.to_vec());
        }
    }
}

/// State-conditioned monotonic mixing network. The hypernetworks emit the
/// mixing weights; passing them through `abs` keeps every weight
/// nonnegative, which enforces dQ_tot/dQ_a >= 0.
pub struct MonotonicMixer {
    pub n_agents: usize,
    pub state_dim: usize,
    pub embed_dim: usize,
    hyper_w1: (Linear, Linear),
    hyper_b1: Linear,
    hyper_w2: (Linear, Linear),
    hyper_b2: (Linear, Linear),
}

impl MonotonicMixer {
    pub fn new(
        rng: &mut ChaCha12Rng,
        n_agents: usize,
        state_dim: usize,
        embed_dim: usize,
        hyper_hidden: usize,
    ) -> MonotonicMixer {
        MonotonicMixer {
            n_agents,
            state_dim,
            embed_dim,
            hyper_w1: (
                Linear::new(rng, state_dim, hyper_hidden),
                Linear::new(rng, hyper_hidden, n_agents * embed_dim),
            ),
            hyper_b1: Linear::new(rng, state_dim, embed_dim),
            hyper_w2: (
                Linear::new(rng, state_dim, hyper_hidden),
                Linear::new(rng, hyper_hidden, embed_dim),
            ),
            hyper_b2: (
                Linear::new(rng, state_dim, embed_dim),
                Linear::new(rng, embed_dim, 1),
            ),
        }
    }

    /// `agent_values`: (batch, n_agents), `state`: (batch, state_dim)
    /// -> (batch, 1)
    pub fn mix(&self, agent_values: &Tensor, state: &Tensor) -> Tensor {
        let batch = state.shape()[0];
        let n = self.n_agents;
        let e = self.embed_dim;
        let w1 = self
            .hyper_w1
            .1
            .forward(&self.hyper_w1.0.forward(state).relu())
            .abs()
            .reshape(&[batch, n, e]);
        let b1 = self.hyper_b1.forward(state).reshape(&[batch, 1, e]);
        let w2 = self
            .hyper_w2
            .1
            .forward(&self.hyper_w2.0.forward(state).relu())
            .abs()
            .reshape(&[batch, e, 1]);
        let b2 = self
            .hyper_b2
            .1
            .forward(&self.hyper_b2.0.forward(state).relu())
            .reshape(&[batch, 1, 1]);

        let hidden = agent_values
            .reshape(&[batch, 1, n])
            .matmul(&w1)
            .add(&b1)
            .elu();
        hidden.matmul(&w2).add(&b2).reshape(&[batch, 1])
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.hyper_w1.0.named("hyper_w1.0", &mut out);
        self.hyper_w1.1.named("hyper_w1.1", &mut out);
        self.hyper_b1.named("hyper_b1", &mut out);
        self.hyper_w2.0.named("hyper_w2.0", &mut out);
        self.hyper_w2.1.named("hyper_w2.1", &mut out);
        self.hyper_b2.0.named("hyper_b2.0", &mut out);
        self.hyper_b2.1.named("hyper_b2.1", &mut out);
        out
    }
}

/// Which value-decomposition structure joins per-agent values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixerKind {
    Vdn,
    Qmix,
}

pub enum Mixer {
    Vdn { n_agents: usize },
    Qmix(MonotonicMixer),
}

impl Mixer {
    pub fn new(
        kind: MixerKind,
        rng: &mut ChaCha12Rng,
        n_agents: usize,
        state_dim: usize,
    ) -> Mixer {
        match kind {
            MixerKind::Vdn => Mixer::Vdn { n_agents },
            MixerKind::Qmix => Mixer::Qmix(MonotonicMixer::new(
                rng,
                n_agents,
                state_dim,
                QMIX_EMBED,
                QMIX_HYPER_HIDDEN,
            )),
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            Mixer::Vdn { n_agents } => *n_agents,
            Mixer::Qmix(m) => m.n_agents,
        }
    }

    /// `agent_values`: (batch, n_agents), `state`: (batch, state_dim)
    /// -> (batch, 1)
    pub fn mix(&self, agent_values: &Tensor, state: &Tensor) -> Tensor {
        assert_eq!(
            agent_values.shape().last(),
            Some(&self.n_agents()),
            "mixer expects one value per agent"
        );
        match self {
            Mixer::Vdn { .. } => {
                let batch = agent_values.shape()[0];
                agent_values
                    .sum_axis(agent_values.shape().len() - 1)
                    .reshape(&[batch, 1])
            }
            Mixer::Qmix(m) => m.mix(agent_values, state),
        }
    }

    /// Scalar mix of one batch row given plain f64 agent values.
    pub fn mix_scalar(&self, agent_values: &[f64], state: &[f64]) -> f64 {
        haven_tensor::no_grad(|| {
            let av = Tensor::from_vec(agent_values.to_vec(), &[1, agent_values.len()]);
            let st = Tensor::from_vec(state.to_vec(), &[1, state.len()]);
            self.mix(&av, &st).item()
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        match self {
            Mixer::Vdn { .. } => Vec::new(),
            Mixer::Qmix(m) => m.named_params(),
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn clone_detached(&self) -> Mixer {
        match self {
            Mixer::Vdn { n_agents } => Mixer::Vdn { n_agents: *n_agents },
            Mixer::Qmix(m) => {
                let mut rng = ChaCha12Rng::seed_from_u64(0);
                let copy = MonotonicMixer::new(
                    &mut rng,
                    m.n_agents,
                    m.state_dim,
                    m.embed_dim,
                    m.hyper_w1.0.w.shape()[1],
                );
                for ((_, dst), (_, src)) in copy.named_params().iter().zip(m.named_params()) {
                    dst.set_values(&src.to_vec());
                }
                Mixer::Qmix(copy)
            }
        }
    }

    pub fn copy_from(&self, other: &Mixer) {
        for ((_, dst), (_, src)) in self.named_params().iter().zip(other.named_params()) {
            dst.set_values(&src.to_vec());
        }
    }
}

/// Per-agent argmax with ties broken toward the lowest action index, plus
/// the mixed value of those maxima. Under both mixer kinds this equals the
/// exhaustive joint maximum.
pub fn greedy_joint_action(
    mixer: &Mixer,
    per_agent_scores: &[Vec<f64>],
    state: &[f64],
) -> (Vec<usize>, f64) {
    let mut actions = Vec::with_capacity(per_agent_scores.len());
    let mut maxima = Vec::with_capacity(per_agent_scores.len());
    for scores in per_agent_scores {
        let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
        for (i, &v) in scores.iter().enumerate() {
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        actions.push(best);
        maxima.push(best_v);
    }
    let value = mixer.mix_scalar(&maxima, state);
    (actions, value)
}

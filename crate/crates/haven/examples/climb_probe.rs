// config sweep for the climb-po induced-problem consistency check
use haven::envs::{ClimbEnv, Env, CLIMB_PAYOFF};
use haven::learner::*;
use haven::nets::MixerKind;
use haven_tensor::{no_grad, Tensor};

struct ClimbSim {
    last: Option<[usize; 2]>,
    noise: [f64; 2],
    t: usize,
}

impl ClimbSim {
    fn reset(noise: [f64; 2]) -> ClimbSim {
        ClimbSim { last: None, noise, t: 0 }
    }
    fn obs(&self, agent: usize) -> Vec<f64> {
        let mut o = vec![0.0; 4];
        if let Some(last) = self.last {
            o[last[agent]] = 1.0;
        }
        o[3] = self.noise[agent];
        o
    }
    fn step(&mut self, joint: [usize; 2], next_noise: [f64; 2]) -> (f64, bool) {
        let r = CLIMB_PAYOFF[joint[0]][joint[1]];
        self.last = Some(joint);
        self.noise = next_noise;
        self.t += 1;
        (r, r == 11.0 || self.t >= 4)
    }
}

#[derive(Clone)]
struct Ctx {
    macro_hidden: Tensor,
    low_hidden: Tensor,
    prev_macro: Option<[usize; 2]>,
    prev_action: Option<[usize; 2]>,
}

fn all_noise() -> [[f64; 2]; 4] {
    [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
}

fn pick(row: &[f64]) -> usize {
    let mut best = 0;
    let mut bv = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > bv {
            best = i;
            bv = v;
        }
    }
    best
}

fn low_greedy(p: &HierarchicalPolicy, sim: &ClimbSim, ctx: &Ctx, mj: [usize; 2]) -> ([usize; 2], Tensor) {
    let l = p.layout;
    let mut rows = Vec::new();
    for agent in 0..2 {
        rows.extend(l.low_input(&sim.obs(agent), Some(mj[agent]), ctx.prev_action.map(|x| x[agent]), agent));
    }
    let x = Tensor::from_vec(rows, &[2, l.low_dim()]);
    let (q, h) = p.low_agent.step(&x, &ctx.low_hidden);
    let qv = q.to_vec();
    let w = l.n_actions;
    ([pick(&qv[0..w]), pick(&qv[w..2 * w])], h)
}

fn macro_greedy(p: &HierarchicalPolicy, sim: &ClimbSim, ctx: &Ctx) -> ([usize; 2], Tensor) {
    let l = p.layout;
    let mut rows = Vec::new();
    for agent in 0..2 {
        rows.extend(l.high_input(&sim.obs(agent), ctx.prev_macro.map(|x| x[agent]), agent));
    }
    let x = Tensor::from_vec(rows, &[2, l.high_dim()]);
    let (q, h) = p.macro_agent.as_ref().unwrap().step(&x, &ctx.macro_hidden);
    let qv = q.to_vec();
    let w = l.n_macro;
    ([pick(&qv[0..w]), pick(&qv[w..2 * w])], h)
}

fn value_t3(p: &HierarchicalPolicy, sim: &ClimbSim, ctx: &Ctx, mj: [usize; 2]) -> f64 {
    let (prims, _) = low_greedy(p, sim, ctx, mj);
    CLIMB_PAYOFF[prims[0]][prims[1]]
}

fn value_root(p: &HierarchicalPolicy, root_noise: [f64; 2], mh: &Tensor, mj: [usize; 2], gamma_h: f64, n_macro: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for n1 in all_noise() {
        for n2 in all_noise() {
            for n3 in all_noise() {
                let mut sim = ClimbSim::reset(root_noise);
                let mut ctx = Ctx {
                    macro_hidden: mh.clone(),
                    low_hidden: p.low_agent.initial_hidden(2),
                    prev_macro: Some(mj),
                    prev_action: None,
                };
                let mut seg = 0.0;
                let mut done = false;
                for noise in [n1, n2, n3] {
                    let (prims, h) = low_greedy(p, &sim, &ctx, mj);
                    ctx.low_hidden = h;
                    ctx.prev_action = Some(prims);
                    let (r, d) = sim.step(prims, noise);
                    seg += r;
                    if d {
                        done = true;
                        break;
                    }
                }
                let mut v = seg;
                if !done {
                    let best = (0..n_macro)
                        .flat_map(|m0| (0..n_macro).map(move |m1| [m0, m1]))
                        .map(|m| value_t3(p, &sim, &ctx, m))
                        .fold(f64::NEG_INFINITY, f64::max);
                    v += gamma_h * best;
                }
                total += v;
                count += 1.0;
            }
        }
    }
    total / count
}

fn run(seed: u64, n_macro: usize, eps_end: f64, buffer: usize, m_update: usize, anneal: usize, total: usize) -> (f64, Vec<f64>) {
    let cfg = TrainConfig {
        variant: Variant::Haven,
        mixer: MixerKind::Qmix,
        n_macro_actions: n_macro,
        epsilon_end: eps_end,
        buffer_capacity: buffer,
        target_update_episodes: m_update,
        epsilon_anneal_steps: anneal,
        total_env_steps: total,
        seed,
        ..TrainConfig::default()
    };
    let mut env = ClimbEnv::new();
    let spec = env.spec().clone();
    let mut learner = Learner::new(cfg.clone(), &spec);
    while learner.env_steps < cfg.total_env_steps {
        learner.run_episode(&mut env).unwrap();
        learner.train_iteration().unwrap();
    }
    let p = &learner.policy;
    no_grad(|| {
        let mut gaps = Vec::new();
        for root_noise in all_noise() {
            let sim = ClimbSim::reset(root_noise);
            let root_ctx = Ctx {
                macro_hidden: p.macro_agent.as_ref().unwrap().initial_hidden(2),
                low_hidden: p.low_agent.initial_hidden(2),
                prev_macro: None,
                prev_action: None,
            };
            let (learned, mh) = macro_greedy(p, &sim, &root_ctx);
            let mut best = f64::NEG_INFINITY;
            let mut got = f64::NEG_INFINITY;
            for m0 in 0..n_macro {
                for m1 in 0..n_macro {
                    let v = value_root(p, root_noise, &mh, [m0, m1], cfg.gamma_h, n_macro);
                    if v > best {
                        best = v;
                    }
                    if [m0, m1] == learned {
                        got = v;
                    }
                }
            }
            gaps.push(best - got);
            // t3 points under the learned root macro
            for n1 in all_noise() {
                for n2 in all_noise() {
                    for n3 in all_noise() {
                        let mut sim = ClimbSim::reset(root_noise);
                        let mut ctx = Ctx {
                            macro_hidden: mh.clone(),
                            low_hidden: p.low_agent.initial_hidden(2),
                            prev_macro: Some(learned),
                            prev_action: None,
                        };
                        let mut done = false;
                        for noise in [n1, n2, n3] {
                            let (prims, h) = low_greedy(p, &sim, &ctx, learned);
                            ctx.low_hidden = h;
                            ctx.prev_action = Some(prims);
                            let (_, d) = sim.step(prims, noise);
                            if d {
                                done = true;
                                break;
                            }
                        }
                        if done {
                            continue;
                        }
                        let (t3m, _) = macro_greedy(p, &sim, &ctx);
                        let mut best = f64::NEG_INFINITY;
                        let mut got = f64::NEG_INFINITY;
                        for m0 in 0..n_macro {
                            for m1 in 0..n_macro {
                                let v = value_t3(p, &sim, &ctx, [m0, m1]);
                                if v > best {
                                    best = v;
                                }
                                if [m0, m1] == t3m {
                                    got = v;
                                }
                            }
                        }
                        gaps.push(best - got);
                    }
                }
            }
        }
        let max_gap = gaps.iter().cloned().fold(0.0f64, f64::max);
        (max_gap, gaps)
    })
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_macro: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let eps_end: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let buffer: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(800);
    let m_update: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(100);
    let anneal: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(20000);
    let total: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(60000);
    for seed in [1u64, 2, 3] {
        let t0 = std::time::Instant::now();
        let (max_gap, gaps) = run(seed, n_macro, eps_end, buffer, m_update, anneal, total);
        let nonzero: Vec<f64> = gaps.iter().cloned().filter(|&g| g > 1e-9).collect();
        println!(
            "seed {seed}: max gap {max_gap:.4}, {} of {} decision points nonzero {:?} ({:.0}s)",
            nonzero.len(),
            gaps.len(),
            &nonzero.iter().map(|g| (g * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            t0.elapsed().as_secs_f64()
        );
    }
}

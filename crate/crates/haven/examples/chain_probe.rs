// config sweep for the degenerate-equivalence setup
use haven::envs::{ChainEnv, Env};
use haven::learner::*;
use haven::nets::MixerKind;
use haven_tensor::no_grad;
use std::rc::Rc;

fn q_star(horizon: usize) -> Vec<[[f64; 2]; 2]> {
    let gamma = 0.99;
    let mut q = vec![[[0.0f64; 2]; 2]; horizon];
    for t in (0..horizon).rev() {
        for s in 0..2 {
            for a in 0..2 {
                let (s_next, reward, done) = match (s, a) {
                    (0, 0) => (0, 0.0, false),
                    (0, 1) => (1, 0.0, false),
                    (1, 0) => (0, 0.0, false),
                    _ => (2, 1.0, true),
                };
                let boot = if done || t + 1 >= horizon { 0.0 }
                    else { q[t + 1][s_next][0].max(q[t + 1][s_next][1]) };
                q[t][s][a] = reward + gamma * boot;
            }
        }
    }
    q
}

fn run(seed: u64, lr: f64, anneal: usize, eps_end: f64, batch: usize, buffer: usize) -> (f64, f64) {
    let cfg = TrainConfig {
        variant: Variant::Haven,
        mixer: MixerKind::Vdn,
        k: 1,
        n_macro_actions: 1,
        total_env_steps: 20_000,
        epsilon_anneal_steps: anneal,
        epsilon_end: eps_end,
        buffer_capacity: buffer,
        batch_size: batch,
        lr,
        seed,
        ..TrainConfig::default()
    };
    let mut env = ChainEnv::new();
    let spec = env.spec().clone();
    let horizon = spec.episode_limit;
    let mut learner = Learner::new(cfg.clone(), &spec);
    while learner.env_steps < cfg.total_env_steps {
        learner.run_episode(&mut env).unwrap();
        learner.train_iteration().unwrap();
    }
    let policy = &learner.policy;
    let recent = buffer.min(learner.buffer.len());
    let episodes: Vec<_> = (learner.buffer.len() - recent..learner.buffer.len())
        .map(|i| Rc::clone(learner.buffer.get(i)))
        .collect();
    let batch = haven::replay::EpisodeBatch {
        max_len: episodes.iter().map(|e| e.len()).max().unwrap(),
        max_segments: episodes.iter().map(|e| e.n_segments()).max().unwrap(),
        episodes,
    };
    let inputs = prepare_inputs(&batch, &policy.layout, policy.state_dim, true);
    let mut q_sum = vec![[[0.0f64; 2]; 2]; horizon];
    let mut v_sum = vec![[0.0f64; 2]; horizon];
    let mut count = vec![[0.0f64; 2]; horizon];
    no_grad(|| {
        let low = &policy.low_agent;
        let value = policy.value_agent.as_ref().unwrap();
        let rows = batch.episodes.len();
        let mut h_low = low.initial_hidden(rows);
        let mut h_val = value.initial_hidden(rows);
        for t in 0..batch.max_len {
            let (q, hl) = low.step(&inputs.low_xs[t], &h_low);
            h_low = hl;
            let (v, hv) = value.step(&inputs.high_xs[t], &h_val);
            h_val = hv;
            let qv = q.values();
            let vv = v.values();
            for (b, e) in batch.episodes.iter().enumerate() {
                if t >= e.len() { continue; }
                let pos = e.obs[t][0].iter().position(|&x| x == 1.0).unwrap();
                if pos > 1 { continue; }
                q_sum[t][pos][0] += qv[b * 2];
                q_sum[t][pos][1] += qv[b * 2 + 1];
                v_sum[t][pos] += vv[b];
                count[t][pos] += 1.0;
            }
        }
    });
    let qs = q_star(horizon);
    let (mut err50, mut err25) = (0.0f64, 0.0f64);
    for t in 0..horizon {
        for s in 0..2 {
            if count[t][s] < 25.0 { continue; }
            let v_hat = v_sum[t][s] / count[t][s];
            for a in 0..2 {
                let q_hat = q_sum[t][s][a] / count[t][s];
                let err = (q_hat - (2.0 * qs[t][s][a] - v_hat)).abs();
                err25 = err25.max(err);
                if count[t][s] >= 50.0 { err50 = err50.max(err); }
            }
        }
    }
    (err50, err25)
}

fn main() {
    let configs: Vec<(&str, f64, usize, f64, usize, usize)> = vec![
        ("base      lr5e-4 a5000 e.2 b32 buf300", 0.0005, 5000, 0.2, 32, 300),
        ("anneal2.5k lr5e-4 a2500 e.2 b32 buf300", 0.0005, 2500, 0.2, 32, 300),
        ("lr2.5e-4  a2500 e.2 b32 buf300", 0.00025, 2500, 0.2, 32, 300),
        ("batch64   lr5e-4 a2500 e.2 b64 buf300", 0.0005, 2500, 0.2, 64, 300),
        ("eps.3     lr5e-4 a2500 e.3 b32 buf300", 0.0005, 2500, 0.3, 32, 300),
        ("buf150    lr5e-4 a2500 e.2 b32 buf150", 0.0005, 2500, 0.2, 32, 150),
    ];
    for (name, lr, anneal, eps, batch, buffer) in configs {
        let mut worst50 = 0.0f64;
        let mut worst25 = 0.0f64;
        for seed in [1, 2, 3] {
            let (e50, e25) = run(seed, lr, anneal, eps, batch, buffer);
            worst50 = worst50.max(e50);
            worst25 = worst25.max(e25);
        }
        println!("{name}: worst err(n>=50) {worst50:.4}  err(n>=25) {worst25:.4}");
    }
}

use haven::harness::config::{algo_to_variant, RunConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let algo = args.get(1).map(|s| s.as_str()).unwrap_or("haven-qmix");
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(200_000);
    let env_id = args.get(4).map(|s| s.as_str()).unwrap_or("gather-then-deliver");

    let mut cfg = RunConfig::default();
    cfg.env_id = env_id.to_string();
    let (variant, mixer) = algo_to_variant(algo).expect("algo");
    cfg.train.variant = variant;
    cfg.train.mixer = mixer;
    cfg.train.seed = seed;
    cfg.train.total_env_steps = steps;
    let make_env = || cfg.make_env();
    let t0 = std::time::Instant::now();
    let (_, outcome) = haven::learner::run(cfg.train.clone(), &make_env, &mut |row, _| {
        eprintln!(
            "[{algo} s{seed}] step {:>7} ep {:>6} eps {:.3} lv {:.4} lqh {:.4} lql {:.4} ret {:>6.2} eval_ret {:>6.2} succ {:.3}",
            row.env_step, row.episode, row.epsilon, row.loss_v, row.loss_qh, row.loss_ql,
            row.train_return, row.eval_return_mean, row.eval_success_rate
        );
    })
    .unwrap();
    eprintln!(
        "[{algo} s{seed}] done: {} episodes, {} steps, {:.0}s, final success {:.3}",
        outcome.episodes,
        outcome.env_steps,
        t0.elapsed().as_secs_f64(),
        outcome.metrics.last().map(|m| m.eval_success_rate).unwrap_or(-1.0)
    );
}

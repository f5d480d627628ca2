fn main() {
    let mut cfg = haven::learner::TrainConfig::default();
    cfg.total_env_steps = 4000;
    cfg.eval_interval = 2000;
    cfg.eval_episodes = 8;
    cfg.seed = 1;
    let make_env = || haven::envs::make_env("gather-then-deliver", 2).unwrap();
    let t0 = std::time::Instant::now();
    let (learner, outcome) = haven::learner::run(cfg, &make_env, &mut |row, _| {
        eprintln!("step {} eps {:.3} ql {:.4} ret {:.2} eval {:.2}/{:.2}",
            row.env_step, row.epsilon, row.loss_ql, row.train_return,
            row.eval_return_mean, row.eval_success_rate);
    }).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    eprintln!("episodes {} steps {} in {:.1}s -> {:.1} steps/s, {:.1} ms/episode",
        outcome.episodes, outcome.env_steps, dt,
        outcome.env_steps as f64 / dt, dt * 1000.0 / outcome.episodes as f64);
    let _ = learner;
}

// probe: how often does a uniform-random policy score on gather?
use haven::envs::{make_env, Env};
use rand::{Rng, SeedableRng};

fn main() {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
    let mut env = make_env("gather-then-deliver", 2).unwrap();
    let mut reward_episodes = 0;
    let mut total_reward = 0.0;
    let mut successes = 0;
    let n = 2000;
    for ep in 0..n {
        env.reset(ep as u64);
        let mut ep_reward = 0.0;
        loop {
            let acts: Vec<usize> = (0..2).map(|_| rng.random_range(0..6)).collect();
            let r = env.step(&acts).unwrap();
            ep_reward += r.reward;
            if r.terminated {
                if r.info.success { successes += 1; }
                break;
            }
        }
        if ep_reward > 0.0 { reward_episodes += 1; }
        total_reward += ep_reward;
    }
    println!("random policy over {n} episodes: {}% with reward, mean return {:.3}, success {}",
        100.0 * reward_episodes as f64 / n as f64, total_reward / n as f64, successes);
}

//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use residual_core::{ReplayBuffer, Td3Agent, Td3Config, Transition, ACT_DIM, OBS_DIM};

/// Agent with default hyperparameters and a buffer of `n` random transitions.
pub fn filled_agent(n: usize, seed: u64) -> (Td3Agent, ReplayBuffer, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = Td3Config::default();
    let agent = Td3Agent::new(cfg.clone(), OBS_DIM, ACT_DIM, 0.005, &mut rng).expect("default config is valid");
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    for _ in 0..n {
        let mut v = |d: usize| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (s, u, s2) = (v(OBS_DIM), v(ACT_DIM), v(OBS_DIM));
        buffer.store(Transition { s, u: u.iter().map(|x| 0.005 * x).collect(), r: -1.0, s2, done: false });
    }
    (agent, buffer, rng)
}

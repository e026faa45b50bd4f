//! Shared fixtures for the benchmarks.

use ehpc_core::envsim::{generate_episode, SystemConfig};
use ehpc_core::offline::{build_offline_program, OfflineProgram};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn config(k: usize) -> SystemConfig {
    SystemConfig {
        k,
        ..SystemConfig::default()
    }
}

/// A random offline program with `k` nodes and `n` slots.
pub fn program(k: usize, n: usize, seed: u64) -> OfflineProgram {
    let config = config(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ep = generate_episode(&mut rng, &config, n);
    build_offline_program(&ep, &config).expect("valid program")
}

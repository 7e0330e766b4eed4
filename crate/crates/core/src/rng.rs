//! Deterministic stream derivation.
//!
//! Every randomized routine in this crate draws from a [`ChaCha8Rng`] derived
//! from a master seed plus a small integer path identifying the consumer
//! (tree index, variety index, scenario cell, restart number and so on).
//! Streams depend only on `(seed, path)`, never on scheduling, so parallel
//! and sequential runs produce identical output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; a cheap bijective mix with good avalanche behavior.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fold(seed: u64, path: &[u64]) -> u64 {
    let mut state = mix(seed ^ 0x243f_6a88_85a3_08d3);
    for (depth, &component) in path.iter().enumerate() {
        // Fold in the position as well as the value so that e.g.
        // [1, 0] and [0, 1] land on different streams.
        state = mix(state ^ mix(component.wrapping_add((depth as u64) << 32)));
    }
    state
}

/// Derive an independent RNG for the stream identified by `path` under
/// `seed`. Distinct paths give statistically independent streams; the same
/// `(seed, path)` pair always yields the same stream.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut word = fold(seed, path);
    for chunk in key.chunks_exact_mut(8) {
        word = mix(word);
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Derive a child seed for a named stage, for APIs that take a seed rather
/// than an RNG.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    mix(fold(seed, path))
}

//! Deterministic per-tree random streams.
//!
//! Each tree gets its own ChaCha8 stream keyed by (global seed, tree id), so
//! trees are reproducible independently and can be built in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Stream for tree `tree_id` under `global_seed`.
pub fn tree_rng(global_seed: u64, tree_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(global_seed) ^ mix(tree_id.wrapping_mul(0xA076_1D64_78BD_642F)))
}

/// Uniform f64 in [0, 1) from the top 53 bits of one u64 draw. Hand-rolled so
/// the byte-level behavior never depends on the rand crate's float paths.
pub fn next_unit(rng: &mut ChaCha8Rng) -> f64 {
    use rand::RngCore;
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

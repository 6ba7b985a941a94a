//! Seed expansion for reproducible parallel runs.
//!
//! A master seed is expanded into per-episode seeds with splitmix64:
//! episode `i` receives `splitmix64(master + (i + 1) * 0x9E3779B97F4A7C15)`.
//! Streams inside an episode (function draw, noise) are derived the same way
//! from the episode seed with distinct stream tags.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th child of `parent`.
pub fn derive(parent: u64, index: u64) -> u64 {
    splitmix64(parent.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn episode_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive(master, i)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

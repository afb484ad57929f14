//! Seeded RNG streams.
//!
//! Every random consumer derives its own stream from (run seed, purpose tag)
//! so that unrelated components never share a generator. That independence is
//! what lets the three condensation schedules consume randomness identically
//! and collapse onto each other in the degenerate configurations.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod tag {
    pub const SBM_EDGES: u64 = 0x01;
    pub const SBM_FEATURES: u64 = 0x02;
    pub const SBM_SPLIT: u64 = 0x03;
    pub const SYNTH_INIT: u64 = 0x10;
    pub const BLOCK_SHUFFLE: u64 = 0x11;
    pub const THETA: u64 = 0x12;
    pub const EXPLAINER: u64 = 0x13;
    pub const CORESET: u64 = 0x20;
    pub const EVAL: u64 = 0x30;
}

/// splitmix64 finalizer; decorrelates nearby (seed, tag) pairs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Independent stream for (seed, tag). Extra distinguishers (epoch, repeat
/// index) can be folded into the tag by the caller.
pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(tag)))
}

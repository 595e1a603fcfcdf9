//! Deterministic RNG streams keyed by integer tags.
//!
//! Every random draw in the lab comes from a stream derived from a base seed
//! and a tuple of tags such as `(purpose, epoch, sample_index)`, so results
//! do not depend on iteration order, batch composition or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream purposes.
pub mod tag {
    pub const CORRUPT: u64 = 1;
    pub const SYNTH: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const AUGMENT_WEAK: u64 = 5;
    pub const AUGMENT_STRONG: u64 = 6;
    pub const GRAD_CHECK: u64 = 7;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}

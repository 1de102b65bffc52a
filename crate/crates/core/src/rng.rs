//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes `base` with a stream tag into a new seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(base: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}

/// Stream tags used across the crate.
pub(crate) mod tag {
    pub const INIT: u64 = 1;
    pub const AUG1: u64 = 2;
    pub const AUG2: u64 = 3;
    pub const CORRUPT: u64 = 4;
    pub const NEGATIVES: u64 = 5;
    pub const DECODER: u64 = 6;
    pub const SPLIT: u64 = 7;
}

//! Seed derivation. Every random draw in the crate comes from a ChaCha stream
//! keyed by `(seed, tag, index)` so that results never depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags; keeping them in one place avoids accidental reuse.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const PREF_PAIRS: u64 = 2;
    pub const PREF_LABELS: u64 = 3;
    pub const EXPERT: u64 = 4;
    pub const PROPOSE: u64 = 5;
    pub const EXPLAIN: u64 = 6;
    pub const PREF_MC: u64 = 7;
    pub const HYPOTHESIS: u64 = 8;
    pub const TRAIN: u64 = 9;
    pub const INIT_WEIGHTS: u64 = 10;
    pub const FAMILY: u64 = 11;
    pub const OPTIMUM: u64 = 12;
    pub const COVERAGE: u64 = 13;
}

pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ tag.wrapping_mul(0xA24B_AED4_963E_E407)) ^ index)
}

pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag, index))
}

pub fn from_key(key: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(key)
}

/// Key derived from the bit pattern of a point, for per-point determinism.
pub fn point_key(seed: u64, x: &[f64]) -> u64 {
    x.iter().fold(splitmix(seed), |acc, v| splitmix(acc ^ v.to_bits()))
}

//! Seed splitting. Every stochastic component owns a ChaCha stream derived
//! from the single run seed plus a path of integers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from `base` and a path such as `[subject, lap]`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng_from(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}

// Stream tags so unrelated consumers never share a derived seed.
pub const TAG_COHORT: u64 = 1;
pub const TAG_LAP: u64 = 2;
pub const TAG_TRAIN: u64 = 3;
pub const TAG_RANDOM_RULE: u64 = 4;
pub const TAG_INIT: u64 = 5;

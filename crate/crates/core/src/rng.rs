//! Counter-based seed derivation.
//!
//! Every random stream is keyed by `(seed, domain, index...)` so any
//! partition of the work reproduces the serial sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Emissions per independently seeded block.
pub const BLOCK: usize = 4096;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, keys))
}

pub const DOMAIN_EMISSION: u64 = 1;
pub const DOMAIN_RAY: u64 = 2;

//! Seed derivation. Every random stream in a run is a pure function of the run
//! seed plus a purpose tag, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a base seed with any number of stream identifiers.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

pub fn rng_from(base: u64, parts: &[u64]) -> RunRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// Stream tags, kept distinct so streams never alias.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const SEARCH: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const MUTATION: u64 = 5;
    pub const DATA: u64 = 6;
}

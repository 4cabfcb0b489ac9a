//! Seed expansion.
//!
//! Every random stream in the crate is derived from one root seed plus a
//! path of stream identifiers, so streams are independent of call order and
//! of how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers used across the crate.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const REPARAM: u64 = 3;
    pub const SAC_INIT: u64 = 4;
    pub const SAC_ACT: u64 = 5;
    pub const SAC_BATCH: u64 = 6;
    pub const SAC_UPDATE: u64 = 7;
    pub const FIXTURE: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &id| splitmix64(acc ^ splitmix64(id)))
}

pub fn rng_for(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

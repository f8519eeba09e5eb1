//! Seed derivation for reproducible parallel work.
//!
//! Every random stream in a run is derived from the master seed plus a
//! purpose tag and indices, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_CANDIDATE: u64 = 1;
pub const STREAM_SELECT: u64 = 2;
pub const STREAM_FINETUNE: u64 = 3;
pub const STREAM_PREDICTOR_UPDATE: u64 = 4;
pub const STREAM_PREDICTOR_INIT: u64 = 5;
pub const STREAM_RETRAIN: u64 = 6;
pub const STREAM_PRETRAIN: u64 = 7;
pub const STREAM_BASELINE: u64 = 8;
pub const STREAM_SWEEP: u64 = 9;
pub const STREAM_DATA: u64 = 10;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a sequence of indices into a new seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, parts: &[u64]) -> Rng {
    rng_from(derive_seed(master, parts))
}

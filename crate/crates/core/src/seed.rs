//! Deterministic seed substreams.
//!
//! Every random decision in a fit draws from a generator seeded by
//! `derive(run_seed, &[purpose, level, view, fold, ...])`, so the outcome
//! does not depend on the order in which parallel workers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
pub mod purpose {
    pub const OUTER_FOLDS: u64 = 1;
    pub const LAMBDA_FOLDS: u64 = 2;
    pub const FOREST: u64 = 3;
    pub const IMPUTE: u64 = 4;
    pub const ADAPTIVE: u64 = 5;
    pub const TREE: u64 = 6;
}

/// Marker used in place of a fold index for fits on the full data.
pub const FULL_DATA: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_at(seed: u64, path: &[u64]) -> Rng {
    rng(derive(seed, path))
}

//! Seeded random streams.
//!
//! Every stochastic step draws from a `ChaCha8Rng` whose 64-bit seed is
//! derived from the experiment seed and a list of stream labels through
//! SplitMix64 mixing. ChaCha8 output is specified bit-for-bit, so a seed
//! reproduces the same draws on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `labels` into `seed`, one SplitMix64 round per label.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn stream(seed: u64, labels: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, labels))
}

// Stream labels. Values are part of the reproducibility contract.
pub const STREAM_CLEAN: u64 = 1;
pub const STREAM_POOL: u64 = 2;
pub const STREAM_NOISE: u64 = 3;
pub const STREAM_INIT: u64 = 4;
pub const STREAM_WARMUP_D: u64 = 5;
pub const STREAM_WARMUP_S: u64 = 6;
pub const STREAM_NETD: u64 = 7;
pub const STREAM_NETS: u64 = 8;
pub const STREAM_BASELINE: u64 = 9;
pub const STREAM_TEST: u64 = 10;

//! Seeded, splittable random streams.
//!
//! Every consumer derives its own ChaCha stream from `(seed, stream)`, so
//! adding draws in one place never shifts the values seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream identifiers used inside the crate.
pub mod streams {
    pub const POWER_ITERATION: u64 = 1;
    pub const COVARIANCE: u64 = 2;
    pub const ROWS: u64 = 3;
    pub const W_STAR: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const TEST_POINT: u64 = 6;
    pub const INJECTED_ERROR: u64 = 7;
    pub const START_POINT: u64 = 8;
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

//! Seed derivation.
//!
//! Every random stream in a run is derived from one master seed through named
//! substreams and a counter, so a value never depends on how work was scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Substream names used across the pipeline.
pub mod streams {
    pub const PRIOR_TRAIN: &str = "prior-train";
    pub const BASELINE: &str = "baseline";
    pub const TRIAL: &str = "trial";
    pub const SNAPSHOTS: &str = "snapshots";
    pub const ADAPTER_INIT: &str = "adapter-init";
    pub const CONCEPT: &str = "concept";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed of substream `stream` of `base`.
pub fn substream(base: u64, stream: &str) -> u64 {
    splitmix64(base ^ splitmix64(fnv1a(stream)))
}

/// The `counter`-th seed of a stream.
pub fn derive_seed(stream_seed: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(stream_seed) ^ counter.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Standard-normal noise vector fully determined by `seed`.
pub fn noise_from_seed(seed: u64, n: usize) -> Vec<f64> {
    standard_normal_vec(&mut rng_from_seed(seed), n)
}

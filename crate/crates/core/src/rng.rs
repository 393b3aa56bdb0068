//! Deterministic random streams.
//!
//! Every trajectory owns independent ChaCha8 streams selected by
//! `(seed, index, purpose)`. ChaCha exposes a 64-bit stream id next to the
//! 256-bit key, so streams for different trajectories never overlap and the
//! noise of trajectory `k` does not depend on how many workers run the
//! ensemble or in which order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

/// What a stream is used for; keeps noise, initial conditions and policy
/// sampling decorrelated even when one of them draws a variable number of
/// values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Noise = 0,
    Init = 1,
    Action = 2,
}

const PURPOSES: u64 = 4;

/// Identifies one trajectory of one ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, index: u64) -> Self {
        StreamKey { seed, index }
    }

    /// The key used for a standalone trajectory with the given seed; equal to
    /// the first trajectory of an ensemble with that base seed.
    pub fn single(seed: u64) -> Self {
        StreamKey { seed, index: 0 }
    }

    pub fn stream(&self, purpose: Purpose) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index.wrapping_mul(PURPOSES).wrapping_add(purpose as u64));
        rng
    }
}

/// Wiener increment with variance `dt`.
pub fn wiener_increment(rng: &mut Stream, dt: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * dt.sqrt()
}

pub fn standard_normal(rng: &mut Stream) -> f64 {
    rng.sample(StandardNormal)
}

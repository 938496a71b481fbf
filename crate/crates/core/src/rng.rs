//! Deterministic random substreams.
//!
//! Every run owns four ChaCha8 streams keyed by the same master seed and
//! distinguished by stream number, so draws on one stream never shift the
//! others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ARRIVALS: u64 = 0;
const ENDPOINTS: u64 = 1;
const CHOICES: u64 = 2;
const DURATIONS: u64 = 3;

#[derive(Debug, Clone)]
pub struct RngStreams {
    /// Inter-arrival times.
    pub arrivals: ChaCha8Rng,
    /// Edge selection.
    pub endpoints: ChaCha8Rng,
    /// Candidate sampling and uniform-feasible draws.
    pub choices: ChaCha8Rng,
    /// Holding times.
    pub durations: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Self {
            arrivals: stream(ARRIVALS),
            endpoints: stream(ENDPOINTS),
            choices: stream(CHOICES),
            durations: stream(DURATIONS),
        }
    }
}

/// Exponential variate with the given rate by inversion.
#[inline]
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    // 1 - U lies in (0, 1], so the log is finite.
    let u: f64 = rng.random();
    -libm::log(1.0 - u) / rate
}

/// Seed for replication `index` of a master seed (splitmix64 finaliser).
pub fn replication_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

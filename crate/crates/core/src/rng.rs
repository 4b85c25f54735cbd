//! Seeded randomness. Every stream is a xoshiro256** generator whose state is
//! expanded from a 64-bit seed by splitmix64, so runs are reproducible from
//! the seeds recorded in a scenario.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type SimRng = Xoshiro256StarStar;

/// Independent random streams used by one simulated vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Perception = 1,
    PoseNoise = 2,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Mixes a base seed with a sequence of labels into a new seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Stream for one trajectory, keyed by its id so that a vehicle draws the
/// same numbers whether it runs alone or alongside others.
pub fn vehicle_stream(rng_seed: u64, trajectory_id: &str, stream: Stream) -> SimRng {
    seeded(derive_seed(rng_seed, &[fnv1a(trajectory_id.as_bytes()), stream as u64]))
}

//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit `&mut impl Rng`. Independent
//! work items (sessions, trials, sweep cells) draw from streams derived from a
//! master seed plus a path of indices, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the simulator.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a master seed with a path of indices into a single 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &i| {
        splitmix64(acc ^ splitmix64(i.wrapping_add(1)))
    })
}

/// Stream for the work item at `path` under `master`.
pub fn stream(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}

pub fn from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

//! Stream splitting for reproducible randomness.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] derived from one
//! base seed. The generator for `(purpose, index)` is the base-seeded ChaCha
//! generator switched to stream `purpose << 40 | index`, so streams never
//! overlap as long as `index < 2^40`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes that own a distinct family of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Arrivals = 1,
    Capacity = 2,
    Init = 3,
    EpisodePlan = 4,
    Rollout = 5,
    Shuffle = 6,
    Heuristic = 7,
    TracePool = 8,
}

const INDEX_BITS: u32 = 40;

pub fn stream_rng(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1u64 << INDEX_BITS));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << INDEX_BITS) | index);
    rng
}

/// Packs two counters into one stream index (`major` gets the high 20 bits).
pub fn pair_index(major: u64, minor: u64) -> u64 {
    debug_assert!(major < (1 << 20) && minor < (1 << 20));
    (major << 20) | minor
}

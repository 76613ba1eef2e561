//! Seed derivation for reproducible, thread-count independent random streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` seeded by mixing a
//! base seed with a path of integers (cycle, slot, column, ...). Two call sites
//! with the same path always observe the same stream regardless of how work
//! is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a path of stream identifiers into a new 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    h
}

/// RNG for the stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

//! Seed derivation. Every random stream in a run is a ChaCha8 generator
//! keyed by a hash of (base seed, stream id, counter).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream id reserved for validation batches, which never reshuffle.
pub const VALIDATION_STREAM: u64 = u64::MAX;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ counter.rotate_left(17))
}

pub fn stream(base: u64, stream: u64, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, counter))
}

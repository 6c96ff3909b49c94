//! Seeded random streams.
//!
//! Every consumer of randomness gets its own stream identified by
//! `(base_seed, stream_id)`. A stream is a ChaCha8 generator keyed by
//! `base_seed` with the ChaCha stream counter set to `stream_id`, so streams
//! with the same seed never overlap. Child seeds for nested experiments are
//! derived with SplitMix64 via [`derive_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RandomStream = ChaCha8Rng;

/// Stream ids reserved by the library. Callers may use any id at or above
/// [`USER_STREAM_BASE`].
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const BLOBS: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const REINIT: u64 = 6;
    pub const USER_STREAM_BASE: u64 = 1 << 32;
}

pub fn stream(base_seed: u64, stream_id: u64) -> RandomStream {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(stream_id);
    rng
}

/// SplitMix64 finaliser over `base ^ mix(id)`.
pub fn derive_seed(base: u64, id: u64) -> u64 {
    let mut z = base ^ id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

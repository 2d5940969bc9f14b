//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), which
//! is portable and produces the same sequence on every platform for a given
//! seed and stream id.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(tag ^ splitmix64(index)));
    rng
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One draw from U(-r, r). Always consumes exactly one `f64`.
pub fn symmetric<R: Rng + ?Sized>(rng: &mut R, r: f64) -> f64 {
    r * (2.0 * rng.random::<f64>() - 1.0)
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// stream tags
pub(crate) const TAG_LAYOUT: u64 = 1;
pub(crate) const TAG_NOISE: u64 = 2;
pub(crate) const TAG_PROPOSAL: u64 = 3;
pub(crate) const TAG_EXTENSION: u64 = 4;
pub(crate) const TAG_SPLIT: u64 = 5;
pub(crate) const TAG_SHUFFLE: u64 = 6;
pub(crate) const TAG_INIT: u64 = 7;
pub(crate) const TAG_GRADCHECK: u64 = 8;

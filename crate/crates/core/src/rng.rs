//! Seeded generator streams.
//!
//! Every random consumer derives its generator from a user seed plus a fixed
//! stream id, so independent consumers never share draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_TRAIN: u64 = 2;
pub(crate) const STREAM_BANK: u64 = 3;
pub(crate) const STREAM_SAMPLE: u64 = 4;
pub(crate) const STREAM_DATA: u64 = 5;
pub(crate) const STREAM_SPLIT: u64 = 6;
pub(crate) const STREAM_SHIFT: u64 = 7;

/// Generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mix two integers into one seed (splitmix64 finalizer).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

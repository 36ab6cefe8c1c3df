//! Seeded random streams.
//!
//! Every consumer derives its own generator from a root seed and a stream
//! index, so output never depends on how many streams exist or on the order
//! in which threads pick them up.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

const CHAIN_DOMAIN: u64 = 0x6368_6169_6e5f_5f5f;
const REPLICATION_DOMAIN: u64 = 0x7265_706c_5f5f_5f5f;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th chain substream: `seed ^ hash(index)`.
pub fn chain_seed(seed: u64, index: usize) -> u64 {
    seed ^ mix64(CHAIN_DOMAIN ^ index as u64)
}

/// Seed of the `rep`-th Monte Carlo replication.
pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    mix64(seed ^ mix64(REPLICATION_DOMAIN ^ rep as u64))
}

pub fn chain_rng(seed: u64, index: usize) -> StreamRng {
    StreamRng::seed_from_u64(chain_seed(seed, index))
}

pub fn stream_rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Uniform draw on the open interval (0, 1) with 53 bits of resolution.
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

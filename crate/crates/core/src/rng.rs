//! Deterministic RNG streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! (seed, purpose, index), so results are independent of iteration order
//! and bit-reproducible across runs of the same binary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PURPOSE_INIT: u64 = 1;
pub const PURPOSE_SHUFFLE: u64 = 2;
pub const PURPOSE_AUGMENT: u64 = 3;
pub const PURPOSE_SAMPLE: u64 = 4;
pub const PURPOSE_SPLIT: u64 = 5;
pub const PURPOSE_MESH: u64 = 6;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A ChaCha8 stream for (seed, purpose, index).
pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut state = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(purpose.wrapping_mul(0xd1b54a32d192ed03))
        .wrapping_add(index.wrapping_mul(0x8cb92ba72f3d8dd7));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

//! Counter-based random streams.
//!
//! Every Monte Carlo consumer draws from a stream keyed on (seed, index),
//! so realizations are independent of evaluation order and thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby keys.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Mix a sequence of keys into one 64-bit value.
pub fn mix(keys: &[u64]) -> u64 {
    let mut h = 0x2545f4914f6cdd1du64;
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k));
    }
    h
}

/// An independent RNG stream for (seed, index).
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, index]))
}

/// An independent RNG stream for (seed, index, sub-index).
pub fn stream3(seed: u64, index: u64, sub: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, index, sub]))
}

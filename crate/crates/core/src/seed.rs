//! Deterministic seed derivation.
//!
//! A run-level seed plus a stream index addresses an independent ChaCha
//! stream. Child streams never depend on execution order, so parallel
//! replicas reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used to draw the ground-truth parameter.
pub const STREAM_PRIOR: u64 = 0x5052_494f_5200_0000;
/// Stream used to draw features and noise.
pub const STREAM_DATA: u64 = 0x4441_5441_0000_0000;
/// Base stream for SGD index sequences; repeat `r` uses `STREAM_SGD + r`.
pub const STREAM_SGD: u64 = 0x5347_4400_0000_0000;

/// Independent generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Outer replicate seeds: replicate `i` of run seed `s` gets a fresh run-level
/// seed mixed with splitmix64, so `(s, i)` and `(s + 1, i - 1)` do not collide.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

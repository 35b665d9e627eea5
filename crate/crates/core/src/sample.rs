//! Shared sampling helpers for the randomized scans.
//!
//! Every scan in this crate derives its randomness from a caller-supplied
//! `u64` seed through `ChaCha8`, so results are reproducible bit for bit and
//! independent of threading (parallel callers shard by index and re-derive
//! per-shard seeds).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math;

/// Default sampling range for coordinates and power ratios: log-uniform on
/// `[1e-3, 1e3]`.
pub const LOG_RANGE_LO: f64 = 1e-3;
pub const LOG_RANGE_HI: f64 = 1e3;

/// A seeded generator for shard `shard` of stream `stream`.
///
/// `seed + shard` picks the word position, `stream` separates logical
/// sub-scans (e.g. region x sign combinations) that share a base seed.
pub fn shard_rng(seed: u64, shard: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(shard));
    rng.set_stream(stream);
    rng
}

/// Log-uniform sample from `[lo, hi]`, `0 < lo < hi`.
pub fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    math::exp(math::ln(lo) + u * (math::ln(hi) - math::ln(lo)))
}

/// Log-uniform sample from the default range `[1e-3, 1e3]`.
pub fn log_uniform_default<R: Rng>(rng: &mut R) -> f64 {
    log_uniform(rng, LOG_RANGE_LO, LOG_RANGE_HI)
}

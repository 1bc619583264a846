//! Seeded random streams.
//!
//! Every source of randomness in the crate derives from a `u64` seed plus a
//! stream index, so any piece of the pipeline (a scan, an epoch, an
//! augmentation) can be regenerated independently and in parallel without
//! changing results.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream reserved for parameter initialization.
pub const STREAM_INIT: u64 = 0;
/// Epoch `e` of training draws from stream `STREAM_EPOCH_BASE + e`, so any
/// epoch's sampling decisions can be regenerated without replaying earlier
/// epochs — this is what makes resumed training match uninterrupted runs.
pub const STREAM_EPOCH_BASE: u64 = 1;

/// Deterministic stream for `(seed, stream)`. Streams with different indices
/// are independent.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal draw via Box-Muller. `libm` keeps results identical with
/// and without std.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Guard against ln(0).
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Uniform draw in `[-bound, bound]`.
pub fn uniform_sym(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    rng.gen_range(-bound..=bound)
}

/// Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    if items.len() < 2 {
        return;
    }
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

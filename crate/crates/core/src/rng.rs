//! Seeded generator used wherever the crate draws random numbers.
//!
//! ChaCha8 with the `rand` 0.8 `Standard` f64 sampler (53 high bits scaled to
//! `[0, 1)`). Both are specified bit-for-bit, so streams are identical across
//! platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Scalar;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw on `[0, 1)`.
#[inline]
pub fn unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen::<f64>()
}

/// Uniform draw on `[lo, hi)`, computed in `f64` and converted once.
#[inline]
pub fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> T {
    T::lit(lo + (hi - lo) * unit(rng))
}

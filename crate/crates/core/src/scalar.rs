//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use rustfft::FftNum;

/// Real floating-point type the transforms, encoder and fusion run on.
///
/// Implemented for `f32` and `f64`. `Signed::abs` and `Float::abs` are both in
/// scope for implementors, so generic code calls `Float::abs` explicitly.
pub trait Scalar: Float + FromPrimitive + FftNum + Debug + Display + Default {
    /// Converts an `f64` constant into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    /// Lossy conversion used for reporting.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance for the imaginary residue left by an inverse transform of a
    /// conjugate-symmetric spectrum.
    #[inline]
    fn residue_tolerance() -> Self {
        Float::max(Self::lit(1e-9), Self::epsilon() * Self::lit(1e4))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

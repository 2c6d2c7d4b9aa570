//! Scalar abstraction for the numeric core.
//!
//! Every solver in this crate is generic over [`Float`]; `f32` and `f64`
//! satisfy it. The default tolerances quoted in the operation contracts
//! assume `f64`, which is what the concrete aliases at the crate root fix.

use std::fmt::{Display, LowerExp};

use num_traits::{Float as NumFloat, FloatConst, FromPrimitive, NumAssign};
use rustfft::FftNum;

/// Floating-point scalar the split-step, spectral and Fock-space code runs on.
pub trait Float:
    NumFloat + FloatConst + FromPrimitive + NumAssign + FftNum + Display + LowerExp
{
    /// Lossy round-trip to `f64`, for diagnostics and error payloads.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Float for T where
    T: NumFloat + FloatConst + FromPrimitive + NumAssign + FftNum + Display + LowerExp
{
}

/// Scalar that additionally works with the dense linear-algebra backend
/// (eigendecompositions in the mode solver and the propagators).
pub trait LinalgFloat: Float + nalgebra::RealField {}

impl<T: Float + nalgebra::RealField> LinalgFloat for T {}

/// Convert an `f64` literal into the working scalar type.
#[inline]
pub fn fl<T: Float>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal not representable in scalar type")
}

/// Speed of light in vacuum, m/s.
#[inline]
pub fn speed_of_light<T: Float>() -> T {
    fl(299_792_458.0)
}

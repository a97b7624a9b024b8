//! Scalar abstraction shared by every numerical module.
//!
//! All geometry, solver and analysis code is written against [`Real`], which is
//! implemented for `f32` and `f64`. The crate root exposes `f64` aliases for the
//! common case.

use std::fmt;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar usable throughout the crate.
///
/// `rustfft::FftNum` pulls in `num_traits::Signed`, so `abs`/`signum` are
/// ambiguous in method position; call them as `Float::abs(x)`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + rustfft::FftNum
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the implemented types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Default relative residual for iterative eigensolves at this precision.
    fn solver_tolerance() -> Self {
        Self::epsilon().sqrt() * Self::lit(10.0)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`].
pub type Cplx<T> = Complex<T>;

/// A complex 2-vector of in-plane (x, y) amplitudes.
pub type Jones<T> = [Complex<T>; 2];

#[inline]
pub(crate) fn two<T: Real>() -> T {
    T::one() + T::one()
}

#[inline]
pub(crate) fn half<T: Real>() -> T {
    T::lit(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(<f64 as Real>::lit(0.25), 0.25);
        assert_eq!(<f32 as Real>::lit(0.25), 0.25f32);
        assert!(<f32 as Real>::solver_tolerance() as f64 > <f64 as Real>::solver_tolerance());
    }
}

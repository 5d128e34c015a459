//! Scalar abstractions.
//!
//! The structure-matrix algebra only needs a signed ring with exact division
//! ([`Ring`]), so it can run over rationals as well as floats. Everything that
//! takes square roots, exponentials or FFTs is written against [`Real`].

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_rational::Rational64;
use num_traits::{Float, FloatConst, FromPrimitive, Num, Signed};

/// Signed number type with exact-or-rounded field division.
pub trait Ring:
    nalgebra::Scalar
    + Copy
    + Num
    + Signed
    + PartialOrd
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
{
    fn from_int(v: i64) -> Self;

    /// Tolerance under which a pivot or residual counts as zero.
    fn zero_tolerance() -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Ring for f64 {
    fn from_int(v: i64) -> Self {
        v as f64
    }
    fn zero_tolerance() -> Self {
        1e-12
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

impl Ring for f32 {
    fn from_int(v: i64) -> Self {
        v as f32
    }
    fn zero_tolerance() -> Self {
        1e-5
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Ring for Rational64 {
    fn from_int(v: i64) -> Self {
        Rational64::from_integer(v)
    }
    fn zero_tolerance() -> Self {
        Rational64::from_integer(0)
    }
    fn to_f64_lossy(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

/// Floating point scalar used by every numerical module (`f32` or `f64`).
pub trait Real:
    Ring + Float + FloatConst + FromPrimitive + Debug + Display + Default + Sum + rustfft::FftNum
{
    /// Lossless-enough conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize representable")
    }
}

impl Real for f64 {}
impl Real for f32 {}

/// Shorthand for [`Real::lit`].
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    T::lit(v)
}

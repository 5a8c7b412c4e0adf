//! Scalar abstractions.
//!
//! Two tiers: [`MomentScalar`] is the minimal field needed by the exact
//! kernel/moment algebra (implemented for `f32`, `f64` and `Ratio<i64>`),
//! while [`Scalar`] adds everything the floating-point engine needs
//! (transcendentals, FFTs, thread-safety).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::Neg;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, Zero};
use rustfft::FftNum;

/// Field over which moment matrices and kernels are manipulated.
pub trait MomentScalar: Clone + Debug + PartialOrd + Num + Neg<Output = Self> {
    fn from_int(v: i64) -> Self;
    /// Absolute value.
    fn magnitude(&self) -> Self;
    /// Whether `self` is unusable as an elimination pivot for a matrix whose
    /// largest entry has magnitude `scale`.
    fn is_negligible(&self, scale: &Self) -> bool;
    fn approx_f64(&self) -> f64;
}

macro_rules! float_moment_scalar {
    ($t:ty) => {
        impl MomentScalar for $t {
            fn from_int(v: i64) -> Self {
                v as $t
            }
            fn magnitude(&self) -> Self {
                <$t>::abs(*self)
            }
            fn is_negligible(&self, scale: &Self) -> bool {
                !self.is_finite() || <$t>::abs(*self) <= <$t>::abs(*scale) * 1.0e3 * <$t>::EPSILON
            }
            fn approx_f64(&self) -> f64 {
                *self as f64
            }
        }
    };
}

float_moment_scalar!(f32);
float_moment_scalar!(f64);

impl MomentScalar for Ratio<i64> {
    fn from_int(v: i64) -> Self {
        Ratio::from_integer(v)
    }
    fn magnitude(&self) -> Self {
        if *self < Ratio::zero() {
            -*self
        } else {
            *self
        }
    }
    fn is_negligible(&self, _scale: &Self) -> bool {
        self.is_zero()
    }
    fn approx_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

/// Floating-point element type of tensors, fields and models.
pub trait Scalar:
    Float + FromPrimitive + FftNum + MomentScalar + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Absolute value without the `Float`/`Signed` method ambiguity.
#[inline]
pub fn abs<S: Scalar>(x: S) -> S {
    Float::abs(x)
}

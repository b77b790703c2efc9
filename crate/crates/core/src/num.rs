//! Scalar abstraction shared by the kinematics, soil and learning code.

use nalgebra as na;
use num_traits as nt;

/// Floating point scalar used by the generic parts of the crate.
///
/// Implemented for `f32` and `f64`. Math methods come from
/// [`na::RealField`]/[`na::ComplexField`]; conversions from `num_traits`.
pub trait Real:
    na::RealField
    + Copy
    + nt::FromPrimitive
    + nt::ToPrimitive
    + nt::FloatConst
    + std::fmt::Display
    + std::fmt::LowerExp
    + Default
    + serde::Serialize
    + serde::de::DeserializeOwned
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const TWO: Self;
    const HALF: Self;
    const EPS: Self;

    /// Lossy conversion from an `f64` literal or config value.
    fn lit(x: f64) -> Self;

    fn to_f64(self) -> f64;

    fn is_finite_val(self) -> bool;
}

macro_rules! impl_real {
    ($f:ty) => {
        impl Real for $f {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const TWO: Self = 2.0;
            const HALF: Self = 0.5;
            const EPS: Self = <$f>::EPSILON;

            #[inline]
            fn lit(x: f64) -> Self {
                x as $f
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn is_finite_val(self) -> bool {
                self.is_finite()
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Clamp `x` into `[lo, hi]`.
#[inline]
pub fn clamp<T: Real>(x: T, lo: T, hi: T) -> T {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

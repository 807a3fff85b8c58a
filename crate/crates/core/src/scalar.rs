//! Floating-point scalar abstraction.
//!
//! Every numeric routine in this crate is generic over [`Scalar`], which
//! bundles the real-field operations needed for linear algebra with the
//! conversion, formatting and serialization bounds needed for artifacts.
//! Random draws and special functions are evaluated in `f64` and widened or
//! narrowed through [`Scalar::of_f64`], so a given seed produces the same
//! sequence of draws for every scalar type.

use std::fmt::{Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type: `f32` or `f64`.
///
/// `RealField` supplies elementary functions (`exp`, `ln`, `tanh`, `sqrt`,
/// `floor`, ...) without the method-resolution clashes that mixing in
/// `num_traits::Float` would cause.
pub trait Scalar:
    RealField
    + Copy
    + Default
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + Display
    + LowerExp
    + FromStr
    + Serialize
    + DeserializeOwned
{
    /// Converts from `f64`, rounding to nearest for narrower types.
    #[inline]
    fn of_f64(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts into every Scalar")
    }

    /// Converts into `f64` exactly.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("every Scalar converts into f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f64::of_f64(1.5), 1.5);
        assert_eq!(f32::of_f64(1.5), 1.5f32);
        assert_eq!(2.25f32.as_f64(), 2.25);
        assert_eq!((-0.0f64).as_f64(), 0.0);
    }

    #[test]
    fn real_field_ops_available() {
        fn probe<S: Scalar>() -> S {
            let x = S::of_f64(0.25);
            (x.exp().ln() + x.tanh() - x.sqrt()).floor()
        }
        assert!(probe::<f64>().is_finite());
        assert!(probe::<f32>().is_finite());
    }
}

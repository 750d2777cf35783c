//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::{Debug, Display};

/// Real floating point type the toolkit computes in: `f32` or `f64`.
///
/// Arithmetic and elementary functions come from [`RealField`]; conversions
/// to and from `f64` literals go through `num-traits`.
pub trait Scalar:
    RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + Serialize
    + DeserializeOwned
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Total for the supported float types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    /// Machine epsilon of the concrete type.
    fn eps() -> Self;
}

impl Scalar for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

impl Scalar for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

/// Infinity norm of a slice.
pub fn norm_inf<S: Scalar>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |m, x| m.max(x.abs()))
}

pub fn norm_1<S: Scalar>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |m, x| m + x.abs())
}

pub fn norm_2<S: Scalar>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |m, x| m + *x * *x).sqrt()
}

pub(crate) fn factorial<S: Scalar>(n: usize) -> S {
    (1..=n).fold(S::one(), |acc, i| acc * S::from_usize_lossy(i))
}

//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Distance from 1 within which a vector already counts as unit length.
    fn unit_tolerance() -> Self;

    /// Lossless widening to `f64`.
    fn to_f64_lossless(self) -> f64;

    /// Rounding conversion from `f64`.
    fn from_f64_lossy(v: f64) -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }
}

impl Scalar for f32 {
    fn unit_tolerance() -> Self {
        1e-6
    }

    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn unit_tolerance() -> Self {
        1e-12
    }

    fn to_f64_lossless(self) -> f64 {
        self
    }

    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Dot product in a fixed left-to-right order, accumulated in `f64`.
pub fn dot_f64<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += x.to_f64_lossless() * y.to_f64_lossless();
    }
    acc
}

/// Euclidean norm accumulated in `f64`.
pub fn l2_norm<T: Scalar>(v: &[T]) -> f64 {
    dot_f64(v, v).sqrt()
}

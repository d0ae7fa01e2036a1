//! Floating-point abstraction so the network code can run in `f32` for speed
//! and in `f64` for finite-difference verification.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

pub trait Scalar:
    Float + num_traits::NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Logistic sigmoid.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// SiLU (x * sigmoid(x)), the smooth base nonlinearity used throughout.
#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// Derivative of SiLU.
#[inline]
pub fn silu_deriv<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

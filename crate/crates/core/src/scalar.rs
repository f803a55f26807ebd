//! Arithmetic abstraction shared by plain `f64` evaluation and the gradient tape.
//!
//! Vector fields, solver steps, controllers and costs are written once against
//! [`Scalar`]. With `T = f64` a value is one state component of one trajectory;
//! with `T = Var` it is a whole batch column recorded on a [`Tape`](crate::neural::Tape).

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A constant with the same shape as `self` (a broadcast column on the tape).
    fn constant_like(self, c: f64) -> Self;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    /// Sign with `sgn(0) = 0`, treated as a constant (zero derivative).
    fn signum0(self) -> Self;

    /// `Σ c_i x_i`, accumulated left to right starting from the first term.
    /// Panics on an empty term list; callers supply a zero constant instead.
    fn lin_comb(terms: &[(Self, f64)]) -> Self;

    /// Clamp to `[lo, hi]`; the derivative is zero outside the interval.
    fn clamp(self, lo: f64, hi: f64) -> Self;

    /// Smallest underlying value (the minimum over the batch on the tape).
    fn min_value(self) -> f64;

    fn all_finite(self) -> bool;
}

#[inline]
pub(crate) fn sgn0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Scalar for f64 {
    #[inline]
    fn constant_like(self, c: f64) -> Self {
        c
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn signum0(self) -> Self {
        sgn0(self)
    }
    fn lin_comb(terms: &[(Self, f64)]) -> Self {
        let (first, rest) = terms
            .split_first()
            .expect("lin_comb needs at least one term");
        let mut acc = first.0 * first.1;
        for &(x, c) in rest {
            acc += x * c;
        }
        acc
    }
    #[inline]
    fn clamp(self, lo: f64, hi: f64) -> Self {
        f64::clamp(self, lo, hi)
    }
    #[inline]
    fn min_value(self) -> f64 {
        self
    }
    #[inline]
    fn all_finite(self) -> bool {
        self.is_finite()
    }
}

/// Element-wise `a + b` over equal-length slices.
pub fn vadd<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

/// `a + c·b` element-wise.
pub fn vaxpy<T: Scalar>(a: &[T], c: f64, b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y * c).collect()
}

pub fn all_finite<T: Scalar>(xs: &[T]) -> bool {
    xs.iter().all(|x| x.all_finite())
}

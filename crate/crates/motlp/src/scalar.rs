//! Scalar abstraction for all numeric kernels.
//!
//! Every solver in this crate is written against [`Scalar`], an ordered
//! signed field with conversions from/to `f64`. Production code runs on
//! `f64`; the exact instantiation [`Rational`] is available for
//! cross-checking small problems without rounding error.

use std::fmt;

use num_traits::{Num, Signed, ToPrimitive};

/// Exact rational scalar backed by arbitrary-precision integers.
pub type Rational = num_rational::BigRational;

/// An ordered signed field usable by the measure and LP kernels.
///
/// `from_f64` must be exact for every finite `f64` the implementation can
/// represent (trivially true for `f64` itself, and true for [`Rational`]
/// because every finite double is a dyadic rational).
pub trait Scalar:
    Num + Signed + PartialOrd + Clone + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;

    fn to_f64(&self) -> f64;

    /// False only for non-finite floating point values.
    fn is_finite_val(&self) -> bool {
        true
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(&self) -> f64 {
        *self
    }

    #[inline]
    fn is_finite_val(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }

    #[inline]
    fn is_finite_val(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Rational {
    fn from_f64(v: f64) -> Self {
        Rational::from_float(v).expect("finite value required for exact arithmetic")
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Minimum by `PartialOrd`; inputs must be comparable.
pub fn smin<S: Scalar>(a: S, b: S) -> S {
    if b < a {
        b
    } else {
        a
    }
}

/// Maximum by `PartialOrd`; inputs must be comparable.
pub fn smax<S: Scalar>(a: S, b: S) -> S {
    if b > a {
        b
    } else {
        a
    }
}

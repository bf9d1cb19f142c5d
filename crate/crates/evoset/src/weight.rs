//! Scalar abstraction over conductance arithmetic.
//!
//! All identity checks in this crate run in two lanes: plain `f64` at a
//! 1e-12 tolerance, and exact rationals where the identities hold with
//! equality. Anything that only adds, subtracts, multiplies, divides and
//! compares conductances is written against [`Weight`] so the two lanes
//! share one implementation.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

pub trait Weight:
    Clone
    + Debug
    + PartialEq
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Send
    + Sync
    + 'static
{
    /// Converts a finite `f64` into the scalar. Exact for the rational lane:
    /// every finite double is a dyadic rational.
    fn from_f64(v: f64) -> Self;

    /// Nearest-double view of the scalar, for reporting and for the
    /// real-analytic operations (powers, Gaussians) that have no rational
    /// counterpart.
    fn to_f64(&self) -> f64;

    /// True when the lane carries exact arithmetic (identity tests may then
    /// demand equality instead of a tolerance).
    fn exact() -> bool;
}

impl Weight for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn exact() -> bool {
        false
    }
}

impl Weight for BigRational {
    fn from_f64(v: f64) -> Self {
        BigRational::from_float(v).expect("finite weight")
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).expect("rational fits in f64 range")
    }

    fn exact() -> bool {
        true
    }
}

/// Absolute difference as `f64`, usable in both lanes for tolerance checks.
pub fn abs_diff<W: Weight>(a: &W, b: &W) -> f64 {
    (a.to_f64() - b.to_f64()).abs()
}

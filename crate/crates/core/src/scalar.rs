//! Numeric traits the estimators are generic over.
//!
//! Floating-point work (regressions, moments, correlations) is written against
//! [`Scalar`], implemented for `f32` and `f64`. Order statistics
//! (quantiles, winsorization) only need ordered-field arithmetic and are
//! written against [`Quantity`], which also covers exact decimals so monetary
//! amounts can be clamped without leaving base 10.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Binary floating point: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Relative threshold below which a column of a decomposition is treated
    /// as linearly dependent on its predecessors.
    fn rank_tolerance() -> Self;

    /// Lossless-enough conversion from `f64` for constants and data.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable in every Scalar")
    }

    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("usize is representable in every Scalar")
    }
}

impl Scalar for f32 {
    fn rank_tolerance() -> Self {
        // 1e-10 is below f32 round-off.
        100.0 * f32::EPSILON
    }
}

impl Scalar for f64 {
    fn rank_tolerance() -> Self {
        1e-10
    }
}

/// Ordered field element with integer conversions: floats and exact decimals.
pub trait Quantity: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug {}

impl<T> Quantity for T where T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug {}

//! Numeric traits shared by the crate.
//!
//! Exact dynamic programming only needs field arithmetic and an ordering, so it
//! is written against [`Scalar`] and runs on rationals as well as floats. Everything
//! that samples, takes logarithms or clips is written against [`Real`].

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, Num};

/// Ordered field element: enough for Bellman backups.
pub trait Scalar: Clone + Debug + PartialOrd + Num {}

impl<T> Scalar for T where T: Clone + Debug + PartialOrd + Num {}

/// IEEE float used by samplers, privatizers and agents (`f32` or `f64`).
pub trait Real:
    Scalar + Float + FloatConst + FromPrimitive + Copy + Display + Send + Sync + Default + 'static
{
    /// Converts an `f64` literal. Panics only if the target cannot represent finite values.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("float literal out of range")
    }

    /// Converts a count.
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count out of range")
    }

    /// Tolerance used for simplex and probability-row checks.
    #[inline]
    fn row_tolerance() -> Self {
        Self::lit(1e-12).max(Self::epsilon() * Self::lit(16.0))
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Scalar + Float + FloatConst + FromPrimitive + Copy + Display + Send + Sync + Default + 'static
{
}

/// `max(a, b)` for partially ordered scalars; `a` wins ties and incomparable pairs.
#[inline]
pub fn partial_max<S: Scalar>(a: S, b: S) -> S {
    if b > a {
        b
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.25), 0.25f32);
        assert_eq!(f64::count(7), 7.0);
        assert!(f32::row_tolerance() > 1e-12);
        assert_eq!(f64::row_tolerance(), 1e-12);
    }

    #[test]
    fn partial_max_prefers_larger() {
        assert_eq!(partial_max(1.0, 2.0), 2.0);
        assert_eq!(partial_max(3, -1), 3);
    }
}

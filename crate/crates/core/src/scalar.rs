//! Numeric abstractions shared by the interval algebra and the repair solver.
//!
//! Time points only need a total order, so [`Interval`](crate::algebra::Interval)
//! is generic over any `PartialOrd` type. Confidence scores and objective values
//! need arithmetic, which is what [`Score`] captures. Floats are supported for
//! speed, `Ratio<i64>` for exact comparisons in tests and audits.

use std::fmt::Debug;
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// A confidence / objective value.
pub trait Score: Num + Copy + PartialOrd + Sum + Debug + Send + Sync + 'static {
    /// Builds `numer / denom`.
    fn from_ratio(numer: i64, denom: i64) -> Self;

    /// Slack used when comparing values produced by different summation orders.
    /// Zero for exact types.
    fn tolerance() -> Self;

    fn to_f64_lossy(self) -> f64;

    /// `self > other` beyond tolerance.
    fn definitely_gt(self, other: Self) -> bool {
        self > other + Self::tolerance()
    }

    /// `self < other` beyond tolerance.
    fn definitely_lt(self, other: Self) -> bool {
        self + Self::tolerance() < other
    }

    fn approx_eq(self, other: Self) -> bool {
        !self.definitely_gt(other) && !self.definitely_lt(other)
    }
}

impl Score for f64 {
    fn from_ratio(numer: i64, denom: i64) -> Self {
        numer as f64 / denom as f64
    }
    fn tolerance() -> Self {
        1e-9
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

impl Score for f32 {
    fn from_ratio(numer: i64, denom: i64) -> Self {
        numer as f32 / denom as f32
    }
    fn tolerance() -> Self {
        1e-4
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Score for Ratio<i64> {
    fn from_ratio(numer: i64, denom: i64) -> Self {
        Ratio::new(numer, denom)
    }
    fn tolerance() -> Self {
        Ratio::from_integer(0)
    }
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

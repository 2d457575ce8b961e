//! Scalar abstraction shared by the numerical modules.
//!
//! Everything that is pure linear algebra or a trace/learner recursion is
//! generic over [`Real`]; `f64` is the workhorse and `f32` is supported for
//! memory-bound runs. Environments with continuous physics (Mountain Car)
//! stay in `f64` and convert at the feature boundary.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the ETD machinery: `f32` or `f64`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("finite scalar")
    }

    #[inline]
    fn finite(self) -> bool {
        self.as_f64().is_finite()
    }

    #[inline]
    fn clamp_to(self, lo: Self, hi: Self) -> Self {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert!(!f64::lit(f64::NAN).finite());
        assert_eq!(3.0f64.clamp_to(-1.0, 1.0), 1.0);
    }
}

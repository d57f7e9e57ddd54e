//! Scalar abstraction for the numeric kernels.

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar the pipeline is generic over.
///
/// Implemented for `f32` and `f64`. All randomness is drawn as `f64` and
/// converted through [`Real::of`], so seeded runs visit identical random
/// streams regardless of the scalar type in use.
pub trait Real:
    Float + FromPrimitive + NumAssignOps + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Conversion from an `f64` constant (lossy for `f32`).
    fn of(v: f64) -> Self;

    /// Widening conversion used for reporting and serialization.
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn of_and_as_f64_round_trip_for_f64() {
        let v = 0.123456789012345678_f64;
        assert_eq!(f64::of(v), v);
        assert_eq!(v.as_f64(), v);
    }

    #[test]
    fn of_truncates_for_f32() {
        let v = 0.1_f64;
        let w = f32::of(v);
        assert_eq!(w, 0.1_f32);
        assert_ne!(w.as_f64(), v);
    }
}

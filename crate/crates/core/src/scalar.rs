//! Floating-point scalar abstraction: everything numeric in this crate is
//! generic over [`Scalar`], instantiated as `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};

/// Scalar type driving all numeric kernels.
pub trait Scalar:
    Float + FromPrimitive + Sum + Debug + Display + FromStr + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, panicking only on genuinely
    /// unrepresentable inputs (never for finite `f64` into `f32`).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 not representable in this scalar type")
    }

    /// Widening conversion to `f64`.
    fn to64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f64::of(1.5).to64(), 1.5);
        assert_eq!(f32::of(0.25), 0.25f32);
    }
}

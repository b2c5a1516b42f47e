//! Floating point scalar abstraction shared by every numeric routine.

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Real scalar the solvers are generic over: `f32` or `f64`.
pub trait Scalar: NdFloat + FromPrimitive + Default {
    /// Converts an `f64` literal into the scalar type.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    /// Lossy widening to `f64`, used for reporting and closed-form statistics.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

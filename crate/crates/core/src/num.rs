//! Scalar abstraction for the statistics and aggregation layer.
//!
//! Escalation scores are exact integers; everything derived from them (means,
//! quartiles, confidence bands, test statistics) is computed in a generic
//! floating-point type so the same code serves `f32` and `f64` callers.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumCast + Debug + Display + Default + Send + Sync + 'static
{
    fn from_usize_exact(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable as float")
    }

    fn from_i64_exact(n: i64) -> Self {
        Self::from_i64(n).expect("i64 representable as float")
    }

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 representable as float")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Mean of a slice of integers, computed from the exact integer sum.
pub fn int_mean<T: Real>(values: &[i64]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum: i64 = values.iter().sum();
    Some(T::from_i64_exact(sum) / T::from_usize_exact(values.len()))
}

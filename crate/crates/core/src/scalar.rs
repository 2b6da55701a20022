use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use serde::Serialize;

/// Floating-point type used for ratios, probabilities and vectors.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Send + Sync + Serialize + 'static {
    fn from_usize_ratio(num: usize, den: usize) -> Self {
        Self::from_usize(num).unwrap() / Self::from_usize(den).unwrap()
    }

    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Display + Default + Send + Sync + Serialize + 'static {}

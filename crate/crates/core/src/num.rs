//! Scalar abstraction shared by the rule engine and the radio math.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

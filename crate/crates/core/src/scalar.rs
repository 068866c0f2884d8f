//! Floating point element type shared by tensors, models and optimizers.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of every tensor: `f32` for training runs, `f64` for
/// gradient checks and exact-arithmetic tests.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Send + Sync + Debug + Display + 'static
{
    /// Human readable tag written into run metadata.
    const NAME: &'static str;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    #[inline]
    fn from_f32_bits(x: f32) -> Self {
        Self::from_f32(x).expect("f32 representable")
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self.to_f32().expect("scalar fits f32")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// A real scalar the network math can run on.
///
/// Training and storage use `f32`; the finite-difference gradient checks run
/// the very same code in `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Converts from `f64`, rounding to the nearest representable value.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion between floating types")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("floating value converts to f64")
    }

    fn from_f32_lossy(v: f32) -> Self {
        Self::from_f32(v).expect("finite conversion between floating types")
    }

    fn to_f32_lossy(self) -> f32 {
        self.to_f32().expect("floating value converts to f32")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

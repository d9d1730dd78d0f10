//! Scalar abstraction over the element type of all feature math.
//!
//! Every numeric routine in this crate is generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. On-disk formats always store 32-bit
//! floats regardless of the in-memory scalar, so values that must survive a
//! save/load round trip are canonicalized through `f32` first.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; panics only for exotic types that cannot
    /// represent ordinary finite constants.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant must convert")
    }

    /// Conversion to `f64` for accumulation and reporting.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// The value rounded through `f32`, the on-disk precision.
    fn canonical_f32(self) -> Self {
        Self::from_f32(self.to_f32().expect("scalar converts to f32"))
            .expect("f32 converts back to scalar")
    }

    /// The raw `f32` image of this value, as serialized.
    fn as_f32(self) -> f32 {
        self.to_f32().expect("scalar converts to f32")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

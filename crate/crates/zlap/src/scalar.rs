//! Scalar abstraction for the storage precision.
//!
//! Feature files and graph files hold `f32` on disk, but everything in this
//! crate is written against [`Scalar`] so the same routines can be
//! instantiated at `f64` (the reference oracles in the test suite do exactly
//! that). Solver-grade accumulations always go through the `f64` accumulator
//! regardless of the storage type; see [`Scalar::acc`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point type usable as the storage scalar of matrices, graphs and
/// score vectors.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Widen losslessly into the accumulator precision.
    fn acc(self) -> f64;

    /// Round from the accumulator precision back to storage.
    fn from_acc(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn acc(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn acc(self) -> f64 {
        self
    }

    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v
    }
}

//! Scalar abstraction for the numeric kernels.
//!
//! Kernels that are pure math (cost matrices, tolerance shaping, reward
//! composition) are written against [`Scalar`] so they work at both `f32`
//! and `f64`. Everything that touches disk or the environment state uses
//! the crate-level [`crate::Real`] alias.

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar with the operations the kernels need.
///
/// `from_f64` lossily narrows constants into the working precision; the
/// helpers below panic only if a finite literal cannot be represented at
/// all, which no supported type does.
pub trait Scalar: Float + FromPrimitive + NumAssign + Copy + std::fmt::Debug + 'static {
    /// Converts a compile-time constant into this scalar type.
    fn c(value: f64) -> Self {
        Self::from_f64(value).expect("finite constant representable in scalar type")
    }

    /// Converts a count into this scalar type.
    fn from_len(value: usize) -> Self {
        Self::from_usize(value).expect("length representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

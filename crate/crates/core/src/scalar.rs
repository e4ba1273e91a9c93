//! The floating-point abstraction every numeric routine is generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// A real scalar usable by the matrix, network and rating code.
///
/// Implemented for `f32` and `f64`. Acceptance tolerances in this crate are
/// calibrated for `f64`; `f32` is supported for the same code paths but
/// finite-difference checks need looser tolerances there.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn of(v: f64) -> Self {
        // FromPrimitive for f32/f64 never fails on a finite or infinite f64.
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

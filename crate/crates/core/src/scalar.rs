//! Scalar abstraction the numeric pipeline is generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar type for datasets, models and solvers.
///
/// Implemented by `f32` and `f64`. Bundles the numeric traits the pipeline
/// needs plus serialization and parsing, so downstream signatures stay at a
/// single `T: Scalar` bound.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + FromStr
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Convert from `f64`, saturating to the nearest representable value.
    ///
    /// Random draws and configuration constants are produced in `f64` and
    /// narrowed once on entry; this keeps RNG streams identical across
    /// scalar instantiations.
    fn cast(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is convertible to every Scalar")
    }

    /// Widen to `f64` (exact for `f32` and `f64`).
    fn widen(self) -> f64 {
        self.to_f64().expect("every Scalar widens to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + FromStr
        + Debug
        + Display
        + Default
        + Serialize
        + DeserializeOwned
        + Send
        + Sync
        + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cast_and_widen_round_trip() {
        assert_eq!(<f64 as Scalar>::cast(1.5), 1.5);
        assert_eq!(<f32 as Scalar>::cast(1.5), 1.5f32);
        assert_eq!(2.25f32.widen(), 2.25f64);
    }
}

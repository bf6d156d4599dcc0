//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type the library is generic over.
///
/// Implemented for `f32` and `f64`. Random draws are always made in `f64`
/// and narrowed, so a seed produces the same realization for both widths
/// up to rounding.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + rustfft::FftNum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Conversion from a count or index.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Natural log of two, for nats/bits conversions.
    #[inline]
    fn ln2() -> Self {
        Self::LN_2()
    }

    /// Round half to even.
    fn round_ties_even(self) -> Self {
        let r = self.round();
        let diff = (self - self.trunc()).abs();
        if diff == Self::lit(0.5) {
            // `round` moved away from zero; step back if that landed on an odd integer.
            let half = r / Self::lit(2.0);
            if half != half.trunc() {
                return r - self.signum();
            }
        }
        r
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts nats to bits.
#[inline]
pub fn nats_to_bits<T: Real>(nats: T) -> T {
    nats / T::ln2()
}

/// Arithmetic mean of a slice; zero for an empty slice.
pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().copied().sum::<T>() / T::from_count(xs.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_even() {
        assert_eq!(0.5f64.round_ties_even(), 0.0);
        assert_eq!(1.5f64.round_ties_even(), 2.0);
        assert_eq!(2.5f64.round_ties_even(), 2.0);
        assert_eq!((-0.5f64).round_ties_even(), 0.0);
        assert_eq!((-1.5f64).round_ties_even(), -2.0);
        assert_eq!((-2.5f32).round_ties_even(), -2.0);
        assert_eq!(0.4f64.round_ties_even(), 0.0);
        assert_eq!(0.6f64.round_ties_even(), 1.0);
        assert_eq!((-0.6f64).round_ties_even(), -1.0);
    }

    #[test]
    fn nats_bits() {
        assert!((nats_to_bits(2.0f64.ln()) - 1.0).abs() < 1e-15);
    }
}

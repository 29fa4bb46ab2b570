//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the probability math is written against: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + NumCast
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` constant into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant must be representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `ln(Σ exp(v))` without overflow; `-inf` for an empty input.
pub fn log_sum_exp<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let values: Vec<T> = values.into_iter().collect();
    let max = values
        .iter()
        .copied()
        .fold(T::neg_infinity(), |acc, v| if v > acc { v } else { acc });
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let sum: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `ceil(x)`, except that values within a relative `1e-9` above an integer
/// are taken as that integer so that `ceil(1.0000000000000002) == 1`.
pub fn ceil_tolerant(x: f64) -> f64 {
    let floor = x.floor();
    if x - floor <= 1e-9 * x.abs().max(1.0) {
        floor
    } else {
        x.ceil()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let v = [0.1f64.ln(), 0.2f64.ln(), 0.3f64.ln()];
        assert!((log_sum_exp(v).exp() - 0.6).abs() < 1e-15);
        assert_eq!(log_sum_exp(Vec::<f64>::new()), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp([f64::NEG_INFINITY, 0.0]), 0.0);
    }

    #[test]
    fn log_sum_exp_survives_underflow() {
        let v = [-2000.0f64, -2000.0];
        assert!((log_sum_exp(v) - (-2000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn tolerant_ceil() {
        assert_eq!(ceil_tolerant(1.0 + 1e-15), 1.0);
        assert_eq!(ceil_tolerant(9.21), 10.0);
        assert_eq!(ceil_tolerant(3.0), 3.0);
        assert_eq!(ceil_tolerant(3.001), 4.0);
    }

    #[test]
    fn f32_literals() {
        assert_eq!(<f32 as Real>::lit(0.5), 0.5f32);
        assert_eq!(<f64 as Real>::lit(0.25).as_f64(), 0.25);
    }
}

//! Numeric traits shared by the scoring and clustering code.
//!
//! Mention-similarity scores are ratios of set sizes, so they can be carried in
//! any [`Scalar`], including exact rationals. Embedding math needs square roots
//! and is restricted to [`Real`] (`f32`/`f64`).

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// A number type that scores can be accumulated in: `f32`, `f64`, or `Ratio<i64>`.
pub trait Scalar:
    Num + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Converts a count into the scalar type.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Converts an `f64` hyperparameter into the scalar type.
    fn from_param(x: f64) -> Self {
        Self::from_f64(x).expect("hyperparameter representable in scalar type")
    }
}

impl<T> Scalar for T where
    T: Num + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

/// Floating point: f32 or f64.
pub trait Real: Float + FromPrimitive + Sum + Debug + Send + Sync + 'static {
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(Self::nan)
    }
}

impl<T> Real for T where T: Float + FromPrimitive + Sum + Debug + Send + Sync + 'static {}

/// Linear-interpolated percentile of an ascending-sorted slice, `pct` in `[0, 100]`.
///
/// Returns `None` for an empty slice.
pub fn percentile_sorted<S: Scalar>(sorted: &[S], pct: f64) -> Option<S> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (pct / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi || frac == 0.0 {
        return Some(sorted[lo].clone());
    }
    let span = sorted[hi].clone() - sorted[lo].clone();
    Some(sorted[lo].clone() + span * S::from_param(frac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile_sorted(&v, 75.0), Some(4.0));
        assert_eq!(percentile_sorted(&v, 0.0), Some(1.0));
        assert_eq!(percentile_sorted(&v, 100.0), Some(5.0));
        let w = [0.0, 10.0];
        assert_eq!(percentile_sorted(&w, 75.0), Some(7.5));
        assert_eq!(percentile_sorted::<f64>(&[], 75.0), None);
    }

    #[test]
    fn percentile_exact_for_rationals() {
        let v = [Rational64::new(1, 3), Rational64::new(2, 3)];
        assert_eq!(percentile_sorted(&v, 75.0), Some(Rational64::new(7, 12)));
    }
}

//! Numeric abstraction for sampling probabilities.
//!
//! Probabilities are ratios of two counts, so the dictionary and the
//! retention oracle are written once against [`Probability`] and used with
//! `f64` for sampling and with [`BigRational`] when an exact answer is
//! needed.

use std::fmt::Debug;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{Num, ToPrimitive};

/// A probability-like scalar built from integer ratios.
pub trait Probability: Num + Clone + PartialOrd + Debug + Send + Sync + 'static {
    fn from_ratio(numer: u64, denom: u64) -> Self;

    fn to_f64_lossy(&self) -> f64;

    /// Conversion for configuration values such as `alpha`.
    fn from_f64(x: f64) -> Self;

    fn min_one(self) -> Self {
        if self > Self::one() {
            Self::one()
        } else {
            self
        }
    }
}

impl Probability for f64 {
    fn from_ratio(numer: u64, denom: u64) -> Self {
        numer as f64 / denom as f64
    }

    fn to_f64_lossy(&self) -> f64 {
        *self
    }

    fn from_f64(x: f64) -> Self {
        x
    }
}

impl Probability for f32 {
    fn from_ratio(numer: u64, denom: u64) -> Self {
        (numer as f64 / denom as f64) as f32
    }

    fn to_f64_lossy(&self) -> f64 {
        *self as f64
    }

    fn from_f64(x: f64) -> Self {
        x as f32
    }
}

impl Probability for BigRational {
    fn from_ratio(numer: u64, denom: u64) -> Self {
        BigRational::new(BigInt::from(numer), BigInt::from(denom))
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Exact binary value of `x`; non-finite input maps to zero.
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).unwrap_or_else(|| BigRational::from_integer(0.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_agree_across_scalars() {
        let exact = BigRational::from_ratio(120, 600);
        assert_eq!(exact, BigRational::new(1.into(), 5.into()));
        assert_eq!(f64::from_ratio(120, 600), 0.2);
        assert!((exact.to_f64_lossy() - 0.2).abs() < 1e-15);
        assert!((f32::from_ratio(24, 6) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn min_one_clamps() {
        assert_eq!(f64::from_ratio(24, 6).min_one(), 1.0);
        assert_eq!(f64::from_ratio(1, 4).min_one(), 0.25);
        assert_eq!(BigRational::from_ratio(7, 3).min_one(), BigRational::from_ratio(1, 1));
    }
}

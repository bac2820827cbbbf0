//! Numeric backends for timing, energy and area arithmetic.
//!
//! Event counts (MACs, bytes, cycles) are always integers. Everything derived
//! from them with physical coefficients (seconds, joules, mm²) is computed in a
//! [`Scalar`], so the same model can run in `f64` for speed or in exact
//! rationals when a conservation identity has to hold bit for bit.

use std::fmt::Debug;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Num, ToPrimitive};

/// Arbitrary-precision rational used for exact runs.
pub type Exact = BigRational;

/// Arithmetic required by the cost, energy and simulation models.
pub trait Scalar: Num + Clone + PartialOrd + Debug + Send + Sync + 'static {
    fn from_u64(v: u64) -> Self;

    /// Converts a configuration coefficient. Exact backends interpret the
    /// shortest decimal representation of `v`, so `1.6e-12` becomes `16/10^13`
    /// rather than the nearest binary fraction.
    fn from_decimal(v: f64) -> Self;

    fn to_f64(&self) -> f64;

    fn from_ratio(r: &Ratio<u64>) -> Self {
        Self::from_u64(*r.numer()) / Self::from_u64(*r.denom())
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }
}

impl Scalar for f64 {
    fn from_u64(v: u64) -> Self {
        v as f64
    }

    fn from_decimal(v: f64) -> Self {
        v
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for f32 {
    fn from_u64(v: u64) -> Self {
        v as f32
    }

    fn from_decimal(v: f64) -> Self {
        v as f32
    }

    fn to_f64(&self) -> f64 {
        *self as f64
    }
}

impl Scalar for Exact {
    fn from_u64(v: u64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }

    fn from_decimal(v: f64) -> Self {
        assert!(v.is_finite(), "non-finite coefficient {v}");
        decimal_to_rational(v)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

fn decimal_to_rational(v: f64) -> Exact {
    // `{:e}` prints the shortest round-trip mantissa, e.g. "1.6e-12".
    let text = format!("{v:e}");
    let (mantissa, exponent) = text.split_once('e').expect("exponent form");
    let exponent: i64 = exponent.parse().expect("exponent");
    let negative = mantissa.starts_with('-');
    let mantissa = mantissa.trim_start_matches('-');
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let digits = BigInt::from_str(&format!("{int_part}{frac_part}")).expect("digits");
    let scale = exponent - frac_part.len() as i64;
    let ten = BigInt::from(10u8);
    let mut value = if scale >= 0 {
        BigRational::from_integer(digits * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(digits, num_traits::pow(ten, (-scale) as usize))
    };
    if negative {
        value = -value;
    }
    value
}

/// Converts an exact ratio into any backend.
pub fn ratio_to<S: Scalar>(r: &Ratio<u64>) -> S {
    S::from_ratio(r)
}

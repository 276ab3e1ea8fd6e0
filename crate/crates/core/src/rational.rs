//! Exact non-negative rational parameters.
//!
//! Rates and depths enter as strings such as `"1/5"`, `"3"`, or `"0.25"` and
//! are kept as reduced integer fractions so bucket arithmetic stays exact.
//! Binary floats are deliberately not accepted as inputs.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A non-negative rational in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RationalParam {
    num: u64,
    den: u64,
}

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Least common multiple, failing on u64 overflow.
pub(crate) fn lcm(a: u64, b: u64) -> Result<u64> {
    debug_assert!(a > 0 && b > 0);
    (a / gcd(a, b)).checked_mul(b).ok_or_else(|| Error::InvalidBucket(
        format!("common denominator of {a} and {b} overflows u64"),
    ))
}

impl RationalParam {
    /// Builds `num/den` reduced to lowest terms. `den` must be nonzero.
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::InvalidRational {
                input: format!("{num}/{den}"),
                reason: "zero denominator".into(),
            });
        }
        let g = gcd(num, den);
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    /// Nearest f64; for display and report columns only, never for state.
    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Exact division by a positive integer.
    pub fn div_int(&self, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidRational {
                input: self.to_string(),
                reason: "division by zero".into(),
            });
        }
        let den = self.den.checked_mul(n).ok_or_else(|| Error::InvalidRational {
            input: self.to_string(),
            reason: format!("denominator overflows when divided by {n}"),
        })?;
        Self::new(self.num, den)
    }

    /// Exact multiplication by a positive integer.
    pub fn mul_int(&self, n: u64) -> Result<Self> {
        let num = self.num.checked_mul(n).ok_or_else(|| Error::InvalidRational {
            input: self.to_string(),
            reason: format!("numerator overflows when multiplied by {n}"),
        })?;
        Self::new(num, self.den)
    }
}

impl PartialOrd for RationalParam {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RationalParam {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self.num as u128 * other.den as u128;
        let rhs = other.num as u128 * self.den as u128;
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for RationalParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for RationalParam {
    type Err = Error;

    /// Accepts `"num/den"`, plain integers, and exact decimal strings
    /// (fractions over powers of ten). Signs, exponents, and anything a
    /// binary float would be needed for are rejected.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let err = |reason: &str| Error::InvalidRational { input: s.into(), reason: reason.into() };
        if s.is_empty() {
            return Err(err("empty string"));
        }
        if s.bytes().any(|b| b == b'+' || b == b'-') {
            return Err(err("signs are not accepted"));
        }
        if let Some((n, d)) = s.split_once('/') {
            let num: u64 = n.trim().parse().map_err(|_| err("numerator is not an unsigned integer"))?;
            let den: u64 = d.trim().parse().map_err(|_| err("denominator is not an unsigned integer"))?;
            return Self::new(num, den);
        }
        if let Some((whole, frac)) = s.split_once('.') {
            if whole.is_empty() || frac.is_empty() {
                return Err(err("decimal needs digits on both sides of the point"));
            }
            if !whole.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err("decimal contains non-digit characters"));
            }
            let whole: u64 = whole.parse().map_err(|_| err("integer part overflows"))?;
            let frac_digits = frac.len() as u32;
            let den = 10u64.checked_pow(frac_digits).ok_or_else(|| err("too many decimal digits"))?;
            let frac: u64 = frac.parse().map_err(|_| err("fractional part overflows"))?;
            let num = whole
                .checked_mul(den)
                .and_then(|w| w.checked_add(frac))
                .ok_or_else(|| err("value overflows u64"))?;
            return Self::new(num, den);
        }
        let num: u64 = s.parse().map_err(|_| err("not an unsigned integer, fraction, or decimal"))?;
        Self::new(num, 1)
    }
}

impl Serialize for RationalParam {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RationalParam {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fraction_and_reduces() {
        let r: RationalParam = "2/10".parse().unwrap();
        assert_eq!((r.num(), r.den()), (1, 5));
    }

    #[test]
    fn parses_integer_and_decimal() {
        let b: RationalParam = "3".parse().unwrap();
        assert_eq!((b.num(), b.den()), (3, 1));
        let r: RationalParam = "0.25".parse().unwrap();
        assert_eq!((r.num(), r.den()), (1, 4));
        let r: RationalParam = "1.5".parse().unwrap();
        assert_eq!((r.num(), r.den()), (3, 2));
    }

    #[test]
    fn rejects_floats_signs_and_garbage() {
        for bad in ["1e-3", "-1/2", "+3", "0.1.2", ".5", "3.", "1/0", "", "nan", "0x10"] {
            assert!(bad.parse::<RationalParam>().is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn ordering_is_exact() {
        let a: RationalParam = "1/3".parse().unwrap();
        let b: RationalParam = "333333333/1000000000".parse().unwrap();
        assert!(b < a);
    }

    #[test]
    fn div_int_is_exact() {
        let r: RationalParam = "2/5".parse().unwrap();
        let q = r.div_int(4).unwrap();
        assert_eq!((q.num(), q.den()), (1, 10));
    }

    #[test]
    fn display_round_trips() {
        for s in ["1/5", "3", "7/3"] {
            let r: RationalParam = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
    }
}

//! Exact rational numbers and their textual forms.
//!
//! Feature values, thresholds and quantized weights are all carried as
//! [`Rational`] so that surrogate evaluation agrees bit-for-bit with what the
//! SMT solver computes.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn ratio(numer: i64, denom: i64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

/// Parses `-3`, `2.75`, `.5`, `1/3` and `-7/2`.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let text = text.trim();
    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    if body.is_empty() {
        return None;
    }
    let value = if let Some((num, den)) = body.split_once('/') {
        let num = parse_digits(num)?;
        let den = parse_digits(den)?;
        if den.is_zero() {
            return None;
        }
        Rational::new(num, den)
    } else if let Some((whole, frac)) = body.split_once('.') {
        if whole.is_empty() && frac.is_empty() {
            return None;
        }
        let whole = if whole.is_empty() { BigInt::zero() } else { parse_digits(whole)? };
        let frac_val = if frac.is_empty() { BigInt::zero() } else { parse_digits(frac)? };
        let scale = pow10(frac.len());
        Rational::new(whole * &scale + frac_val, scale)
    } else {
        Rational::from_integer(parse_digits(body)?)
    };
    Some(if negative { -value } else { value })
}

fn parse_digits(s: &str) -> Option<BigInt> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

pub(crate) fn pow10(exp: usize) -> BigInt {
    num_traits::pow(BigInt::from(10), exp)
}

/// Canonical exact rendering: integers as `3`, terminating decimals as
/// `0.125`, everything else as `p/q`.
pub fn format_rational(value: &Rational) -> String {
    if value.is_integer() {
        return value.numer().to_string();
    }
    match terminating_digits(value.denom()) {
        Some(digits) => format_decimal(value, digits),
        None => format!("{}/{}", value.numer(), value.denom()),
    }
}

/// Number of fractional digits needed to print `1/denom` exactly, if finite.
fn terminating_digits(denom: &BigInt) -> Option<usize> {
    let mut d = denom.clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let (mut twos, mut fives) = (0usize, 0usize);
    while d.is_even() {
        d /= &two;
        twos += 1;
    }
    while (&d % &five).is_zero() {
        d /= &five;
        fives += 1;
    }
    d.is_one().then_some(twos.max(fives))
}

/// Rounds `value * 10^digits` half away from zero.
pub fn round_scaled(value: &Rational, digits: usize) -> BigInt {
    let scaled = value * Rational::from_integer(pow10(digits));
    let magnitude = scaled.abs();
    let floor = magnitude.floor().to_integer();
    let frac = &magnitude - Rational::from_integer(floor.clone());
    let rounded = if frac >= ratio(1, 2) { floor + 1 } else { floor };
    if scaled.is_negative() {
        -rounded
    } else {
        rounded
    }
}

/// Decimal rendering with at most `digits` fractional digits, rounded half
/// away from zero; trailing zeros are dropped.
pub fn format_decimal(value: &Rational, digits: usize) -> String {
    let scaled = round_scaled(value, digits);
    let negative = scaled.is_negative();
    let magnitude = scaled.abs().to_string();
    let mut text = if digits == 0 {
        magnitude
    } else {
        let padded = format!("{:0>width$}", magnitude, width = digits + 1);
        let (whole, frac) = padded.split_at(padded.len() - digits);
        let frac = frac.trim_end_matches('0');
        if frac.is_empty() {
            whole.to_string()
        } else {
            format!("{whole}.{frac}")
        }
    };
    if negative && text.bytes().any(|b| b != b'0' && b != b'.') {
        text.insert(0, '-');
    }
    text
}

pub fn to_f64(value: &Rational) -> f64 {
    value.to_f64().unwrap_or_else(|| {
        let n = value.numer().to_f64().unwrap_or(f64::NAN);
        let d = value.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Exact binary value of a finite float.
pub fn from_f64(value: f64) -> Option<Rational> {
    Rational::from_float(value)
}

/// Serde adapter storing a rational as its canonical string.
pub mod serde_rational {
    use super::{format_rational, parse_rational, Rational};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let text = String::deserialize(d)?;
        parse_rational(&text).ok_or_else(|| D::Error::custom(format!("invalid rational `{text}`")))
    }
}

/// Serde adapter for a vector of rationals.
pub mod serde_rational_vec {
    use super::{format_rational, parse_rational, Rational};
    use serde::{de::Error, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &[Rational], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(values.len()))?;
        for v in values {
            seq.serialize_element(&format_rational(v))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rational>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|t| parse_rational(t).ok_or_else(|| D::Error::custom(format!("invalid rational `{t}`"))))
            .collect()
    }
}

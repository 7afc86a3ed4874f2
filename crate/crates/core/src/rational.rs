//! Exact rational scalars and the `p/q` literal syntax used by the file
//! formats and CLI flags.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::str::FromStr;
use thiserror::Error;

/// Arbitrary-precision rational. Always in lowest terms with a positive
/// denominator (maintained by the underlying representation).
pub type Rational = BigRational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseRationalError {
    #[error("empty rational literal")]
    Empty,
    #[error("invalid rational literal `{0}`")]
    InvalidSyntax(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
}

/// Shorthand for small constants.
pub fn rat(numer: i64, denom: i64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn rat_int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Parses `p/q` or a plain integer. No whitespace, no decimals.
pub fn parse_rational(s: &str) -> Result<Rational, ParseRationalError> {
    if s.is_empty() {
        return Err(ParseRationalError::Empty);
    }
    match s.split_once('/') {
        None => BigInt::from_str(s)
            .map(Rational::from_integer)
            .map_err(|_| ParseRationalError::InvalidSyntax(s.to_owned())),
        Some((num, den)) => {
            let n = BigInt::from_str(num)
                .map_err(|_| ParseRationalError::InvalidSyntax(s.to_owned()))?;
            let d = BigInt::from_str(den)
                .map_err(|_| ParseRationalError::InvalidSyntax(s.to_owned()))?;
            if d.is_zero() {
                return Err(ParseRationalError::ZeroDenominator(s.to_owned()));
            }
            Ok(Rational::new(n, d))
        }
    }
}

/// Parses a decimal literal (`0.25`, `-1.5`, `1.475e0`) into the exact
/// rational it denotes. Used by the CLI when converting non-rational flag
/// values, so printed outputs can be fed back in.
pub fn parse_decimal(s: &str) -> Result<Rational, ParseRationalError> {
    let (mantissa, exponent) = match s.split_once(['e', 'E']) {
        Some((m, e)) => {
            let exp: i32 = e
                .parse()
                .map_err(|_| ParseRationalError::InvalidSyntax(s.to_owned()))?;
            if exp.unsigned_abs() > 4096 {
                return Err(ParseRationalError::InvalidSyntax(s.to_owned()));
            }
            (m, exp)
        }
        None => (s, 0i32),
    };
    let base = parse_decimal_mantissa(mantissa, s)?;
    if exponent == 0 {
        return Ok(base);
    }
    let scale = Rational::from_integer(BigInt::from(10u32).pow(exponent.unsigned_abs()));
    Ok(if exponent > 0 { base * scale } else { base / scale })
}

fn parse_decimal_mantissa(s: &str, literal: &str) -> Result<Rational, ParseRationalError> {
    let (int_part, frac_part) = match s.split_once('.') {
        Some(parts) => parts,
        None => return parse_rational(s),
    };
    let s = literal;
    if frac_part.is_empty() || frac_part.contains(['+', '-']) {
        return Err(ParseRationalError::InvalidSyntax(s.to_owned()));
    }
    let negative = int_part.starts_with('-');
    let int_digits = if int_part.is_empty() || int_part == "-" || int_part == "+" {
        BigInt::zero()
    } else {
        BigInt::from_str(int_part).map_err(|_| ParseRationalError::InvalidSyntax(s.to_owned()))?
    };
    let frac_digits =
        BigInt::from_str(frac_part).map_err(|_| ParseRationalError::InvalidSyntax(s.to_owned()))?;
    if frac_digits.is_negative() {
        return Err(ParseRationalError::InvalidSyntax(s.to_owned()));
    }
    let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
    let frac = Rational::new(frac_digits, scale);
    let whole = Rational::from_integer(int_digits.abs());
    let value = whole + frac;
    Ok(if negative { -value } else { value })
}

/// Formats in lowest terms: `p/q`, or just `p` when the denominator is 1.
/// Round-trips bit-exactly through [`parse_rational`].
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// 17 significant digits, enough to round-trip any binary64 value.
pub fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

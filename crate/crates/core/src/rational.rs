//! Exact rational helpers shared by the LP and Turing modules.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};

pub type Q = BigRational;

pub fn int(i: i64) -> Q {
    Q::from_integer(BigInt::from(i))
}

pub fn ratio(p: i64, q: i64) -> Q {
    Q::new(BigInt::from(p), BigInt::from(q))
}

/// Parses `"p/q"`, an integer, or a decimal literal such as `"1e-3"` or
/// `"1.41421356"` into an exact rational.
pub fn parse(s: &str) -> Result<Q> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| Error::Format(format!("bad rational '{s}'")))?;
        let q: BigInt = q.trim().parse().map_err(|_| Error::Format(format!("bad rational '{s}'")))?;
        if q.is_zero() {
            return Err(Error::Format(format!("zero denominator in '{s}'")));
        }
        return Ok(Q::new(p, q));
    }
    parse_decimal(s).ok_or_else(|| Error::Format(format!("bad number '{s}'")))
}

fn parse_decimal(s: &str) -> Option<Q> {
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (whole, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if whole.is_empty() && frac.is_empty() {
        return None;
    }
    let digits = format!("{whole}{frac}");
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let num: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut q = if scale >= 0 {
        Q::from_integer(num * num_traits::pow(ten, scale as usize))
    } else {
        Q::new(num, num_traits::pow(ten, (-scale) as usize))
    };
    if neg {
        q = -q;
    }
    Some(q)
}

/// Exact rational equal to the shortest decimal that round-trips `x`.
///
/// `1.41421356_f64` becomes `141421356/100000000` rather than the dyadic
/// expansion of the binary double.
pub fn from_f64_decimal(x: f64) -> Q {
    assert!(x.is_finite(), "cannot convert non-finite value to a rational");
    parse_decimal(&format!("{x:e}")).expect("formatted float parses")
}

/// Nearest multiple of `2^-bits` to `x` (ties away from zero).
pub fn round_dyadic(x: f64, bits: u32) -> Q {
    let scale = (bits as f64).exp2();
    let n = (x * scale).round();
    Q::new(BigInt::from(n as i64), BigInt::one() << bits)
}

pub fn to_string(q: &Q) -> String {
    if q.denom().is_one() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

pub fn abs(q: &Q) -> Q {
    q.abs()
}

/// Serde adapter storing a rational as its `"p/q"` string.
pub mod as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::Q;

    pub fn serialize<S: Serializer>(q: &Q, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::to_string(q))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Q, D::Error> {
        let text = String::deserialize(d)?;
        super::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_forms() {
        assert_eq!(parse("3/6").unwrap(), ratio(1, 2));
        assert_eq!(parse("1e-3").unwrap(), ratio(1, 1000));
        assert_eq!(parse("-2.5").unwrap(), ratio(-5, 2));
        assert_eq!(parse("7").unwrap(), int(7));
        assert!(parse("1/0").is_err());
        assert!(parse("abc").is_err());
    }

    #[test]
    fn decimal_conversion_is_shortest() {
        assert_eq!(from_f64_decimal(1.41421356), ratio(141421356, 100000000));
        assert_eq!(from_f64_decimal(0.1), ratio(1, 10));
        assert_eq!(from_f64_decimal(-3.0), int(-3));
    }

    #[test]
    fn dyadic_rounding() {
        assert_eq!(round_dyadic(0.5, 4), ratio(1, 2));
        assert_eq!(round_dyadic(0.3, 2), ratio(1, 4));
        assert_eq!(to_string(&ratio(-3, 4)), "-3/4");
        assert_eq!(to_string(&int(5)), "5");
    }
}

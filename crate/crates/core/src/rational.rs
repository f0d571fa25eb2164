//! Exact rational helpers shared by every module.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::str::FromStr;

pub type Rational = BigRational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse rational from {0:?}")]
pub struct ParseRationalError(pub String);

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Parses `"num/den"`, a bare integer, or a finite decimal such as `"0.6931500"`.
pub fn parse_rational(s: &str) -> Result<Rational, ParseRationalError> {
    let t = s.trim();
    let err = || ParseRationalError(s.to_string());
    if let Some((n, d)) = t.split_once('/') {
        let n = BigInt::from_str(n.trim()).map_err(|_| err())?;
        let d = BigInt::from_str(d.trim()).map_err(|_| err())?;
        if d.is_zero() {
            return Err(err());
        }
        return Ok(Rational::new(n, d));
    }
    if let Some((ip, fp)) = t.split_once('.') {
        let neg = ip.starts_with('-');
        let ip = ip.trim_start_matches(['-', '+']);
        if fp.is_empty() && ip.is_empty() {
            return Err(err());
        }
        if !fp.chars().all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let whole = if ip.is_empty() {
            BigInt::zero()
        } else {
            BigInt::from_str(ip).map_err(|_| err())?
        };
        let frac = if fp.is_empty() {
            BigInt::zero()
        } else {
            BigInt::from_str(fp).map_err(|_| err())?
        };
        let den = num_traits::pow(BigInt::from(10), fp.len());
        let q = Rational::new(whole * &den + frac, den);
        return Ok(if neg { -q } else { q });
    }
    BigInt::from_str(t)
        .map(Rational::from_integer)
        .map_err(|_| err())
}

/// Always `num/den`, so that a round trip through text is bit-exact.
pub fn format_rational(q: &Rational) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

pub fn to_f64(q: &Rational) -> f64 {
    q.to_f64().unwrap_or_else(|| {
        if q.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    })
}

/// Exact conversion; panics on non-finite input.
pub fn from_f64(x: f64) -> Rational {
    Rational::from_float(x).expect("finite float")
}

pub fn pow2(e: i32) -> Rational {
    let two = BigInt::from(2);
    if e >= 0 {
        Rational::from_integer(num_traits::pow(two, e as usize))
    } else {
        Rational::new(BigInt::one(), num_traits::pow(two, (-e) as usize))
    }
}

/// Exponent `e` of the largest power of two `2^e <= q`, for `q > 0`.
pub fn floor_log2(q: &Rational) -> i64 {
    assert!(q.is_positive(), "floor_log2 of non-positive rational");
    let nb = q.numer().bits() as i64;
    let db = q.denom().bits() as i64;
    let mut e = nb - db;
    // 2^e <= q < 2^(e+2) at this point; adjust.
    loop {
        if &pow2(e as i32) > q {
            e -= 1;
        } else if &pow2((e + 1) as i32) <= q {
            e += 1;
        } else {
            return e;
        }
    }
}

pub fn floor_pow2(q: &Rational) -> Rational {
    pow2(floor_log2(q) as i32)
}

/// Rounds down to a multiple of `2^-bits`.
pub fn round_down(q: &Rational, bits: u32) -> Rational {
    let scale = pow2(bits as i32);
    let scaled = q * &scale;
    Rational::from_integer(scaled.floor().to_integer()) / scale
}

pub fn round_up(q: &Rational, bits: u32) -> Rational {
    let scale = pow2(bits as i32);
    let scaled = q * &scale;
    Rational::from_integer(scaled.ceil().to_integer()) / scale
}

pub fn abs(q: &Rational) -> Rational {
    q.abs()
}

pub fn max(a: &Rational, b: &Rational) -> Rational {
    if a >= b {
        a.clone()
    } else {
        b.clone()
    }
}

pub fn min(a: &Rational, b: &Rational) -> Rational {
    if a <= b {
        a.clone()
    } else {
        b.clone()
    }
}

/// Least common multiple of the denominators.
pub fn common_denominator<'a, I: IntoIterator<Item = &'a Rational>>(qs: I) -> BigInt {
    qs.into_iter()
        .fold(BigInt::one(), |acc, q| acc.lcm(q.denom()))
}

/// Upward-rounded `exp(x)` for finite `x`: two ulps above the libm result.
pub fn exp_up(x: f64) -> f64 {
    next_up(next_up(x.exp()))
}

pub fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let b = x.to_bits();
    if x > 0.0 {
        f64::from_bits(b + 1)
    } else {
        f64::from_bits(b - 1)
    }
}

pub fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// serde adapter storing a rational as its `num/den` string.
pub mod serde_str {
    use super::*;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(q))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(serde::de::Error::custom)
    }
}

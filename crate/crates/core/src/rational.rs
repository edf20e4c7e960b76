//! Exact rational helpers: construction, `"n/d"` text form, serde adapters,
//! and exact comparisons against powers of two.

use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub type Rational = BigRational;

/// `n/d` as a rational. Panics on `d == 0`.
pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn from_biguint(n: &BigUint) -> Rational {
    Rational::from_integer(BigInt::from(n.clone()))
}

/// `2^e` for any integer exponent.
pub fn pow2(e: i64) -> Rational {
    let mag = BigInt::one() << e.unsigned_abs();
    if e >= 0 {
        Rational::from_integer(mag)
    } else {
        Rational::new_raw(BigInt::one(), mag)
    }
}

/// Always `"n/d"`, also for integers, so consumers parse a single shape.
pub fn format_rational(x: &Rational) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse rational from {0:?}")]
pub struct ParseRationalError(pub String);

/// Accepts `"n/d"` or a bare integer `"n"`.
pub fn parse_rational(s: &str) -> Result<Rational, ParseRationalError> {
    let err = || ParseRationalError(s.to_string());
    let t = s.trim();
    let (n, d) = match t.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (t, "1"),
    };
    let n: BigInt = n.parse().map_err(|_| err())?;
    let d: BigInt = d.parse().map_err(|_| err())?;
    if d.is_zero() {
        return Err(err());
    }
    Ok(Rational::new(n, d))
}

/// Display wrapper for rationals in `"n/d"` form.
pub struct Frac<'a>(pub &'a Rational);

impl fmt::Display for Frac<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

/// `#[serde(with = "serde_rational")]`
pub mod serde_rational {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(D::Error::custom)
    }
}

/// `#[serde(with = "serde_rational_opt")]`
pub mod serde_rational_opt {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
        match x {
            Some(x) => s.serialize_some(&format_rational(x)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Rational>, D::Error> {
        let s = Option::<String>::deserialize(d)?;
        s.map(|s| parse_rational(&s).map_err(D::Error::custom))
            .transpose()
    }
}

/// `#[serde(with = "serde_rational_vec")]`
pub mod serde_rational_vec {
    use super::*;
    use serde::{de::Error, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(xs: &[Rational], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for x in xs {
            seq.serialize_element(&format_rational(x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rational>, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        v.iter()
            .map(|s| parse_rational(s).map_err(D::Error::custom))
            .collect()
    }
}

/// Big unsigned integers as decimal strings.
pub mod serde_biguint {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&x.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        s.trim().parse().map_err(D::Error::custom)
    }
}

/// Exact integer square root if `n` is a perfect square.
pub fn exact_sqrt(n: &BigUint) -> Option<BigUint> {
    let r = num_integer::Roots::sqrt(n);
    (&r * &r == *n).then_some(r)
}

/// `floor(log2 y)` for `y > 0`.
pub fn floor_log2(y: &Rational) -> i64 {
    assert!(y.is_positive(), "floor_log2 of non-positive value");
    let nb = y.numer().bits() as i64;
    let db = y.denom().bits() as i64;
    let mut k = nb - db;
    while pow2(k) > *y {
        k -= 1;
    }
    while pow2(k + 1) <= *y {
        k += 1;
    }
    k
}

/// `ceil(x)` as a big integer.
pub fn ceil(x: &Rational) -> BigInt {
    x.ceil().to_integer()
}

/// Exact test of `2^t > y` for rational `t` without evaluating `2^t`.
///
/// Reduces to `z ∈ (1,2)`, `s ∈ (0,1)` and decides `2^s > z` by repeated
/// squaring of `z` with outward-rounded dyadic bounds. If the bounds cannot
/// separate `z^2` from 2 the precision is doubled and the scan restarts.
pub fn two_pow_exceeds(t: &Rational, y: &Rational) -> bool {
    if !y.is_positive() {
        return true;
    }
    let k = floor_log2(y);
    let kr = int(k);
    if *t >= &kr + Rational::one() {
        return true;
    }
    if *t <= kr {
        return false;
    }
    let z = y / pow2(k);
    if z.is_one() {
        return true;
    }
    let s = t - &kr;
    let mut prec: u64 = 64;
    loop {
        if let Some(ans) = refine_pow2(&s, &z, prec) {
            return ans;
        }
        prec *= 2;
        assert!(
            prec <= 1 << 24,
            "two_pow_exceeds: precision budget exhausted"
        );
    }
}

fn refine_pow2(s: &Rational, z: &Rational, prec: u64) -> Option<bool> {
    let scale = BigInt::one() << prec;
    let scaled = z * Rational::from_integer(scale.clone());
    let mut lo = scaled.floor().to_integer();
    let mut hi = scaled.ceil().to_integer();
    let two = &scale << 1usize;
    let mut s = s.clone();
    let one = Rational::one();
    // Each squaring at least doubles the relative width, so the scan is
    // hopeless well before `prec` steps; bail out and let the caller refine.
    for _ in 0..prec {
        s = &s + &s;
        let lo2 = (&lo * &lo) >> prec;
        let hi2 = {
            let p = &hi * &hi;
            let (q, r) = p.div_rem(&scale);
            if r.is_zero() {
                q
            } else {
                q + 1
            }
        };
        if lo2 >= two {
            lo = lo2 >> 1usize;
            hi = (hi2 + 1) >> 1usize;
            s -= &one;
        } else if hi2 < two {
            lo = lo2;
            hi = hi2;
        } else {
            return None;
        }
        if lo < scale {
            lo = scale.clone();
        }
        if !s.is_positive() {
            return Some(false);
        }
        if s >= one {
            return Some(true);
        }
    }
    None
}

//! Arbitrary-precision rational numbers and their text form.
//!
//! Every numeric quantity in the solver is a [`Rat`]. The text form used in
//! JSON files is `"p"` or `"p/q"` with `q > 0` and the fraction reduced.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};
use std::str::FromStr;

pub type Rat = BigRational;

pub fn rat_int(v: i64) -> Rat {
    Rat::from_integer(BigInt::from(v))
}

pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_usize(v: usize) -> Rat {
    Rat::from_integer(BigInt::from(v))
}

/// Parses `"p"` or `"p/q"` into an exact rational. Rejects zero denominators.
pub fn parse_rat(text: &str) -> Result<Rat, String> {
    let s = text.trim();
    if s.is_empty() {
        return Err("empty rational literal".to_string());
    }
    let (num_s, den_s) = match s.split_once('/') {
        Some((a, b)) => (a, Some(b)),
        None => (s, None),
    };
    let num = BigInt::from_str(num_s.trim()).map_err(|_| format!("bad numerator in {s:?}"))?;
    let den = match den_s {
        Some(d) => BigInt::from_str(d.trim()).map_err(|_| format!("bad denominator in {s:?}"))?,
        None => BigInt::one(),
    };
    if den.is_zero() {
        return Err(format!("zero denominator in {s:?}"));
    }
    Ok(Rat::new(num, den))
}

/// Canonical text form: reduced, `"p"` when integral, else `"p/q"` with `q > 0`.
pub fn format_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// `max` over exact rationals (total order, no NaN concerns).
pub fn rat_max(a: Rat, b: Rat) -> Rat {
    if a >= b {
        a
    } else {
        b
    }
}

pub fn rat_abs(r: &Rat) -> Rat {
    r.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_integers_and_fractions() {
        assert_eq!(parse_rat("5").unwrap(), rat_int(5));
        assert_eq!(parse_rat("-3/4").unwrap(), rat(-3, 4));
        assert_eq!(parse_rat("1/3").unwrap(), rat(1, 3));
        assert_eq!(parse_rat("6/4").unwrap(), rat(3, 2));
        assert!(parse_rat("1/0").is_err());
        assert!(parse_rat("").is_err());
        assert!(parse_rat("x").is_err());
    }

    #[test]
    fn formats_canonically() {
        assert_eq!(format_rat(&rat_int(7)), "7");
        assert_eq!(format_rat(&rat(6, 4)), "3/2");
        assert_eq!(format_rat(&rat(-1, 3)), "-1/3");
        assert_eq!(format_rat(&rat(4, -8)), "-1/2");
    }

    #[test]
    fn round_trips() {
        for s in ["0", "17", "-5", "22/7", "-9/2"] {
            let r = parse_rat(s).unwrap();
            assert_eq!(format_rat(&r), s);
        }
    }
}

//! Scalar types used for latency arithmetic.
//!
//! Latency multipliers are relative quantities such as `1.25` or `6.3`. The
//! timing model multiplies them with integral cycle counts and rounds up, so
//! the simulator is generic over the scalar. Exact rationals avoid the
//! `ceil(6.3 * 10) == 64` class of surprises that binary floats produce.

use std::fmt::{Debug, Display};

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Smallest integral cycle count not below `self`; negatives clamp to 0.
    fn ceil_cycles(self) -> u64;

    /// Parse a plain decimal literal such as `5.3` or `2`.
    fn parse_decimal(text: &str) -> Option<Self>;

    fn from_cycles(cycles: u64) -> Self {
        Self::from_u64(cycles).expect("cycle count representable in scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn ceil_cycles(self) -> u64 {
        if self <= 0.0 {
            0
        } else {
            self.ceil() as u64
        }
    }

    fn parse_decimal(text: &str) -> Option<Self> {
        text.trim().parse::<f64>().ok().filter(|v| v.is_finite())
    }
}

impl Scalar for f32 {
    fn ceil_cycles(self) -> u64 {
        if self <= 0.0 {
            0
        } else {
            self.ceil() as u64
        }
    }

    fn parse_decimal(text: &str) -> Option<Self> {
        text.trim().parse::<f32>().ok().filter(|v| v.is_finite())
    }
}

impl Scalar for Ratio<i64> {
    fn ceil_cycles(self) -> u64 {
        let c = self.ceil().to_integer();
        if c <= 0 {
            0
        } else {
            c as u64
        }
    }

    fn parse_decimal(text: &str) -> Option<Self> {
        parse_decimal_ratio(text)
    }
}

/// Exact conversion of a decimal literal (optionally signed, optional
/// fraction, optional exponent) into a reduced rational.
fn parse_decimal_ratio(text: &str) -> Option<Ratio<i64>> {
    let text = text.trim();
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(pos) => (&text[..pos], text[pos + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut numer: i64 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    let scale = exp - frac_part.len() as i32;
    let mut denom: i64 = 1;
    if scale >= 0 {
        numer = numer.checked_mul(10i64.checked_pow(scale as u32)?)?;
    } else {
        denom = 10i64.checked_pow((-scale) as u32)?;
    }
    if negative {
        numer = -numer;
    }
    Some(Ratio::new(numer, denom))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_literals_are_exact() {
        assert_eq!(Ratio::<i64>::parse_decimal("6.3"), Some(Ratio::new(63, 10)));
        assert_eq!(Ratio::<i64>::parse_decimal("1.25"), Some(Ratio::new(5, 4)));
        assert_eq!(Ratio::<i64>::parse_decimal("2"), Some(Ratio::from_integer(2)));
        assert_eq!(Ratio::<i64>::parse_decimal("5e-1"), Some(Ratio::new(1, 2)));
        assert_eq!(Ratio::<i64>::parse_decimal("-.5"), Some(Ratio::new(-1, 2)));
        assert_eq!(Ratio::<i64>::parse_decimal("x"), None);
        assert_eq!(Ratio::<i64>::parse_decimal("."), None);
    }

    #[test]
    fn ceiling() {
        assert_eq!(Ratio::new(63i64, 10).ceil_cycles(), 7);
        assert_eq!((Ratio::new(63i64, 10) * Ratio::from_integer(10)).ceil_cycles(), 63);
        assert_eq!(Ratio::from_integer(3i64).ceil_cycles(), 3);
        assert_eq!(2.0f64.ceil_cycles(), 2);
        assert_eq!(2.01f64.ceil_cycles(), 3);
        assert_eq!((-1.0f64).ceil_cycles(), 0);
    }
}

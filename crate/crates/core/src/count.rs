//! Exact rational counts.
//!
//! Usage counts double as sufficient statistics and as the model
//! structure itself, and corpora may be rescaled to a fixed total, so
//! counts are kept as exact rationals end to end. They are converted to
//! `f64` only at the scoring boundary (log-gamma evaluation).

use num_rational::Rational64;
use num_traits::{Signed, ToPrimitive, Zero};

pub type Count = Rational64;

/// Parses a count written as an integer (`"3"`) or a fraction (`"5/2"`).
pub fn parse_count(s: &str) -> Option<Count> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n: i64 = num.trim().parse().ok()?;
        let d: i64 = den.trim().parse().ok()?;
        if d == 0 {
            return None;
        }
        Some(Rational64::new(n, d))
    } else {
        let n: i64 = s.parse().ok()?;
        Some(Rational64::from_integer(n))
    }
}

pub fn count_from_int(n: i64) -> Count {
    Rational64::from_integer(n)
}

pub fn count_to_f64(c: &Count) -> f64 {
    c.to_f64().unwrap_or_else(|| *c.numer() as f64 / *c.denom() as f64)
}

pub fn is_positive(c: &Count) -> bool {
    c.is_positive() && !c.is_zero()
}

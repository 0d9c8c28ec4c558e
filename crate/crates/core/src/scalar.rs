//! Scalar abstraction for distances, scores and thresholds.
//!
//! Embeddings are always stored as `f32` (the interchange format is
//! binary32). Every quantity derived from them is computed in a [`Real`]
//! type chosen by the caller; the crate root aliases fix it to `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type used for distances and everything derived from them.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Widen (or keep) a stored embedding coordinate.
    fn from_coord(v: f32) -> Self;

    /// Lossy conversion from a count or index.
    fn from_count(n: usize) -> Self {
        <Self as NumCast>::from(n).expect("count representable as float")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_f64_lossy(v: f64) -> Self {
        <Self as NumCast>::from(v).unwrap_or_else(Self::nan)
    }
}

impl Real for f32 {
    #[inline(always)]
    fn from_coord(v: f32) -> Self {
        v
    }
}

impl Real for f64 {
    #[inline(always)]
    fn from_coord(v: f32) -> Self {
        <f64 as From<f32>>::from(v)
    }
}

/// Format a value the way C's `%.{digits}g` would: `digits` significant
/// digits, trailing zeros trimmed, scientific notation outside `[1e-4, 1e{digits})`.
pub fn format_significant<R: Real>(value: R, digits: usize) -> String {
    let v = value.to_f64_lossy();
    let digits = digits.max(1);
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    // The exponent is read back from the rounded scientific form so that
    // values like 9.9999999996 round up into the next decade correctly.
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

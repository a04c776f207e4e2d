//! Fixed-point rendering with round-half-even.
//!
//! `core::fmt` rounds the exact binary value of a float to the requested
//! number of digits and breaks exact ties to even. Percentages are produced by
//! formatting the fraction with two extra digits and shifting the decimal
//! point in the text, so no lossy `* 100.0` happens before rounding.

use alloc::format;
use alloc::string::String;

/// `value` with `decimals` digits after the point, half-even.
pub fn fixed(value: f64, decimals: usize) -> String {
    format!("{value:.decimals$}")
}

/// A fraction rendered as a percentage with `decimals` digits, half-even on
/// the stored fraction: `percent(0.969697, 2) == "96.97"`.
pub fn percent(fraction: f64, decimals: usize) -> String {
    if !fraction.is_finite() {
        return format!("{}", fraction * 100.0);
    }
    let raw = format!("{:.*}", decimals + 2, fraction.abs());
    let (int, frac) = raw.split_once('.').expect("formatted with a decimal point");
    let (moved, rest) = frac.split_at(2);
    let mut whole = String::from(int);
    whole.push_str(moved);
    let whole = whole.trim_start_matches('0');
    let whole = if whole.is_empty() { "0" } else { whole };
    let negative = fraction.is_sign_negative() && raw.bytes().any(|b| b.is_ascii_digit() && b != b'0');
    let sign = if negative { "-" } else { "" };
    if rest.is_empty() {
        format!("{sign}{whole}")
    } else {
        format!("{sign}{whole}.{rest}")
    }
}

/// Seconds to minutes.
pub fn minutes(seconds: f64) -> f64 {
    seconds / 60.0
}

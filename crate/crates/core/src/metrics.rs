//! Padding and cross-device distribution ratios.
//!
//! Both metrics measure how far a list of token counts is from its maximum:
//! `sum(max - x_i) / (max * n)`. The sum is computed exactly in integers and
//! reduced by the gcd before the single conversion to `f64`.

use crate::error::{Error, Result};
use crate::types::DeviceLoads;

/// Fraction of padded tokens in a mini-batch padded to its longest sample.
pub fn pad_ratio(per_sample_tokens: &[u64]) -> Result<f64> {
    spread_ratio(per_sample_tokens).ok_or_else(|| {
        Error::invalid("pad_ratio needs a non-empty list with at least one non-zero entry")
    })
}

/// Normalized spread of mini-batch tokens across data-parallel ranks.
pub fn dist_ratio(loads: &DeviceLoads) -> Result<f64> {
    spread_ratio(loads.as_slice())
        .ok_or_else(|| Error::invalid("dist_ratio needs at least one rank with a non-zero load"))
}

/// Shared kernel; `None` for empty or all-zero input.
pub(crate) fn spread_ratio(xs: &[u64]) -> Option<f64> {
    let max = *xs.iter().max()?;
    if max == 0 {
        return None;
    }
    let num: u128 = xs.iter().map(|&x| u128::from(max - x)).sum();
    let den = u128::from(max) * xs.len() as u128;
    let g = gcd(num, den);
    Some((num / g) as f64 / (den / g) as f64)
}

/// Like [`spread_ratio`] but treats an all-zero list as perfectly balanced.
pub(crate) fn spread_ratio_or_zero(xs: &[u64]) -> f64 {
    spread_ratio(xs).unwrap_or(0.0)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

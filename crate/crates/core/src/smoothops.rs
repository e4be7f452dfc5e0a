//! Smoothed max/min operators.
//!
//! `smooth_max(u, γ) = γ · ln Σ exp(u_i / γ)` is always evaluated in the
//! max-shifted form, so `|u_i / γ|` far beyond the `exp` overflow point is
//! safe. Its gradient with respect to `u_i` is the softmax weight
//! `exp((u_i − value) / γ)`. A `−∞` entry is a hard sentinel: it contributes
//! exactly zero weight and never produces a NaN.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothMaxResult {
    pub value: f64,
    /// Partial derivatives of `value` with respect to each input.
    pub weights: Vec<f64>,
}

/// Shifted log-sum-exp without validation or allocation. Returns `−∞` when
/// every input is `−∞`.
#[inline]
pub(crate) fn lse(u: &[f64], gamma: f64) -> f64 {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = u
        .iter()
        .filter(|v| **v != f64::NEG_INFINITY)
        .map(|&v| ((v - m) / gamma).exp())
        .sum();
    m + gamma * s.ln()
}

/// Softmax weight of one input given the aggregate `value` returned by [`lse`].
#[inline]
pub(crate) fn weight(u: f64, value: f64, gamma: f64) -> f64 {
    if u == f64::NEG_INFINITY || value == f64::NEG_INFINITY {
        0.0
    } else {
        ((u - value) / gamma).exp()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be positive and finite, got {gamma}")));
    }
    Ok(())
}

pub fn smooth_max(u: &[f64], gamma: f64) -> Result<SmoothMaxResult> {
    if u.is_empty() {
        return Err(Error::invalid("smooth_max of an empty list"));
    }
    check_gamma(gamma)?;
    if let Some(bad) = u.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
        return Err(Error::invalid(format!("smooth_max input must be real or -inf, got {bad}")));
    }
    let value = lse(u, gamma);
    let weights = u.iter().map(|&v| weight(v, value, gamma)).collect();
    Ok(SmoothMaxResult { value, weights })
}

/// `smooth_min(u, γ) = −smooth_max(−u, γ)`; `+∞` entries carry zero weight.
pub fn smooth_min(u: &[f64], gamma: f64) -> Result<SmoothMaxResult> {
    if u.contains(&f64::NEG_INFINITY) {
        return Err(Error::invalid("smooth_min input must be real or +inf"));
    }
    let neg: Vec<f64> = u.iter().map(|v| -v).collect();
    let r = smooth_max(&neg, gamma)?;
    Ok(SmoothMaxResult {
        value: -r.value,
        weights: r.weights,
    })
}

//! Sample moments over the survey sample.
//!
//! Every variance and covariance here uses the population denominator `n`,
//! so that the variance decomposition of the ideal weights holds exactly.

use serde::{Deserialize, Serialize};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn cov(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64
}

/// A correlation that may be undefined because one side has zero spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    /// Set when either variance is zero; `value` is then reported as 0.
    pub degenerate: bool,
}

/// Variances at or below this are treated as zero spread.
pub const DEGENERATE_VAR: f64 = 1e-24;

pub fn cor(x: &[f64], y: &[f64]) -> Correlation {
    let vx = var(x);
    let vy = var(y);
    if vx <= DEGENERATE_VAR || vy <= DEGENERATE_VAR {
        return Correlation {
            value: 0.0,
            degenerate: true,
        };
    }
    let r = cov(x, y) / (vx * vy).sqrt();
    Correlation {
        value: r.clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Sign with an exact zero, unlike `f64::signum`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_denominator() {
        assert_eq!(var(&[1.0, 3.0]), 1.0);
        assert_eq!(cov(&[1.0, 3.0], &[2.0, 6.0]), 2.0);
    }

    #[test]
    fn degenerate_correlation_is_flagged() {
        let c = cor(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]);
        assert!(c.degenerate);
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn quantile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn sign_of_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(-2.0), -1.0);
    }
}

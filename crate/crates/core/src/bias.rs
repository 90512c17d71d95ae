//! Bias of a weighted estimator from an omitted confounder.
//!
//! With `eps = w - w*` (both mean 1), the asymptotic bias of the Hájek mean is
//! `cov_S(eps, Y)`. Writing `R2 = var_S(eps) / var_S(w*)` and
//! `rho = cor_S(eps, Y)`, and using `var_S(w*) = var_S(w) + var_S(eps)`:
//!
//! ```text
//! bias = rho * sqrt(var_S(Y) * var_S(w) * R2 / (1 - R2))     (R2 < 1)
//! bias = rho * sqrt(var_S(Y) * var_S(w*))                    (R2 = 1)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{cor, cov, var, Correlation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub rho: f64,
    pub r2: f64,
    /// Posited `var_S(w*)`; required iff `r2 == 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_w_star: Option<f64>,
}

impl SensitivityParams {
    pub fn new(rho: f64, r2: f64) -> Result<Self> {
        let p = SensitivityParams {
            rho,
            r2,
            var_w_star: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_var_w_star(mut self, v: f64) -> Result<Self> {
        self.var_w_star = Some(v);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::Invalid(format!("rho = {} outside [-1, 1]", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.r2) {
            return Err(Error::Invalid(format!("R^2 = {} outside [0, 1]", self.r2)));
        }
        if let Some(v) = self.var_w_star {
            if !(v > 0.0) {
                return Err(Error::Invalid(format!("var_S(w*) = {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// Quantities estimable from the sample that scale the bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedScale {
    pub var_y: f64,
    pub var_w: f64,
    pub mu_hat: f64,
}

impl ObservedScale {
    pub fn new(var_y: f64, var_w: f64, mu_hat: f64) -> Result<Self> {
        if !(var_y >= 0.0 && var_w >= 0.0) {
            return Err(Error::Invalid("variances must be non-negative".into()));
        }
        Ok(ObservedScale { var_y, var_w, mu_hat })
    }

    /// Scale terms from mean-1 weights and the outcome.
    pub fn from_sample(w: &[f64], y: &[f64]) -> Result<Self> {
        if w.len() != y.len() {
            return Err(Error::LengthMismatch {
                what: "weights vs outcome",
                left: w.len(),
                right: y.len(),
            });
        }
        let mu_hat = crate::calibration::weighted_mean(w, y)?;
        Self::new(var(y), var(w), mu_hat)
    }
}

pub fn bias(params: &SensitivityParams, scale: &ObservedScale) -> Result<f64> {
    params.validate()?;
    if params.rho == 0.0 || params.r2 == 0.0 {
        return Ok(0.0);
    }
    if params.r2 >= 1.0 {
        let v = params.var_w_star.ok_or(Error::MissingIdealVariance)?;
        return Ok(params.rho * (scale.var_y * v).sqrt());
    }
    Ok(params.rho * (scale.var_y * scale.var_w * params.r2 / (1.0 - params.r2)).sqrt())
}

/// Point estimate corrected by the posited bias.
pub fn adjusted_estimate(mu_hat: f64, params: &SensitivityParams, scale: &ObservedScale) -> Result<f64> {
    Ok(mu_hat - bias(params, scale)?)
}

/// `eps = w - w*`.
pub fn error_vector(w: &[f64], w_star: &[f64]) -> Result<Vec<f64>> {
    if w.len() != w_star.len() {
        return Err(Error::LengthMismatch {
            what: "w vs w*",
            left: w.len(),
            right: w_star.len(),
        });
    }
    Ok(w.iter().zip(w_star).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub r2: f64,
    pub rho: Correlation,
    /// `cov_S(eps, Y)`, the bias in covariance form.
    pub cov_eps_y: f64,
    pub var_w: f64,
    pub var_w_star: f64,
    pub var_eps: f64,
}

impl Decomposition {
    pub fn params(&self) -> SensitivityParams {
        SensitivityParams {
            rho: self.rho.value,
            r2: self.r2,
            var_w_star: Some(self.var_w_star).filter(|v| *v > 0.0),
        }
    }
}

/// Sensitivity parameters implied by a known `(w, w*)` pair.
pub fn decompose(w: &[f64], w_star: &[f64], y: &[f64]) -> Result<Decomposition> {
    let eps = error_vector(w, w_star)?;
    if y.len() != eps.len() {
        return Err(Error::LengthMismatch {
            what: "weights vs outcome",
            left: eps.len(),
            right: y.len(),
        });
    }
    let var_w_star = var(w_star);
    if !(var_w_star > 0.0) {
        return Err(Error::Invalid("var_S(w*) must be positive".into()));
    }
    let var_eps = var(&eps);
    Ok(Decomposition {
        r2: var_eps / var_w_star,
        rho: cor(&eps, y),
        cov_eps_y: cov(&eps, y),
        var_w: var(w),
        var_w_star,
        var_eps,
    })
}

/// Per-unit IPW error from residual imbalance in the omitted variable:
/// `eps_i = w_i (1 - P(U_i | phi(X_i)) / P(U_i | phi(X_i), S = 1))`.
pub fn ipw_error(w_i: f64, p_u_given_x: f64, p_u_given_x_s: f64) -> Result<f64> {
    if p_u_given_x_s == 0.0 {
        return Err(Error::Invalid("zero conditional sample probability".into()));
    }
    for p in [p_u_given_x, p_u_given_x_s] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Invalid(format!("probability {p} outside (0, 1]")));
        }
    }
    Ok(w_i * (1.0 - p_u_given_x / p_u_given_x_s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scale(var_y: f64, var_w: f64) -> ObservedScale {
        ObservedScale::new(var_y, var_w, 0.0).unwrap()
    }

    #[test]
    fn zero_rho_or_r2_gives_zero() {
        let s = scale(4.0, 1.0);
        assert_eq!(bias(&SensitivityParams::new(0.0, 0.7).unwrap(), &s).unwrap(), 0.0);
        assert_eq!(bias(&SensitivityParams::new(0.9, 0.0).unwrap(), &s).unwrap(), 0.0);
    }

    #[test]
    fn hand_arithmetic() {
        // sqrt(4 * 1 * 0.5/0.5) * 0.5 = 1
        let b = bias(&SensitivityParams::new(0.5, 0.5).unwrap(), &scale(4.0, 1.0)).unwrap();
        assert_abs_diff_eq!(b, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn r2_one_needs_var_w_star() {
        let p = SensitivityParams::new(0.5, 1.0).unwrap();
        assert!(matches!(bias(&p, &scale(4.0, 1.0)), Err(Error::MissingIdealVariance)));
        let p = p.with_var_w_star(9.0).unwrap();
        assert_abs_diff_eq!(bias(&p, &scale(4.0, 1.0)).unwrap(), 0.5 * 6.0);
    }

    #[test]
    fn parameter_ranges() {
        assert!(SensitivityParams::new(1.1, 0.2).is_err());
        assert!(SensitivityParams::new(0.1, -0.2).is_err());
        assert!(SensitivityParams::new(0.1, 0.2).unwrap().with_var_w_star(0.0).is_err());
    }

    #[test]
    fn adjustment_reflects_in_rho() {
        let s = ObservedScale::new(3.0, 0.7, 2.0).unwrap();
        let up = adjusted_estimate(2.0, &SensitivityParams::new(0.3, 0.2).unwrap(), &s).unwrap();
        let dn = adjusted_estimate(2.0, &SensitivityParams::new(-0.3, 0.2).unwrap(), &s).unwrap();
        assert_abs_diff_eq!(up - 2.0, -(dn - 2.0), epsilon = 1e-15);
        let none = adjusted_estimate(2.0, &SensitivityParams::new(0.0, 0.2).unwrap(), &s).unwrap();
        assert_eq!(none, 2.0);
    }

    #[test]
    fn error_vector_examples() {
        let e = error_vector(&[1.2, 0.8], &[1.5, 0.5]).unwrap();
        assert_abs_diff_eq!(e[0], -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1], 0.3, epsilon = 1e-15);
        assert_eq!(error_vector(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(error_vector(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn identical_weights_decompose_to_zero() {
        let w = [0.5, 1.5, 1.0];
        let d = decompose(&w, &w, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(d.r2, 0.0);
        assert!(d.rho.degenerate);
        assert_eq!(d.rho.value, 0.0);
        assert_eq!(d.cov_eps_y, 0.0);
    }

    #[test]
    fn ipw_error_examples() {
        assert_eq!(ipw_error(1.7, 0.4, 0.4).unwrap(), 0.0);
        assert_abs_diff_eq!(ipw_error(2.0, 0.25, 0.5).unwrap(), 1.0);
        assert!(ipw_error(1.0, 0.6, 0.3).unwrap() < 0.0);
        assert!(ipw_error(1.0, 0.6, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn bias_matches_covariance_form(
            raw in proptest::collection::vec((0usize..4, 0.2f64..3.0, -5.0f64..5.0), 4..60)
        ) {
            // w is the within-stratum mean of w*, so var(w*) = var(w) + var(eps)
            let n = raw.len() as f64;
            let ms = raw.iter().map(|r| r.1).sum::<f64>() / n;
            let ws: Vec<f64> = raw.iter().map(|r| r.1 / ms).collect();
            let mut sum = [0.0; 4];
            let mut cnt = [0.0; 4];
            for (r, &x) in raw.iter().zip(&ws) {
                sum[r.0] += x;
                cnt[r.0] += 1.0;
            }
            let w: Vec<f64> = raw.iter().map(|r| sum[r.0] / cnt[r.0]).collect();
            let y: Vec<f64> = raw.iter().map(|r| r.2).collect();
            prop_assume!(var(&w) > 1e-6 && var(&y) > 1e-6);
            let d = decompose(&w, &ws, &y).unwrap();
            prop_assume!(!d.rho.degenerate);
            prop_assert!(d.r2 < 1.0);
            prop_assert!((d.var_w + d.var_eps - d.var_w_star).abs() <= 1e-12);
            let s = ObservedScale::new(var(&y), d.var_w, 0.0).unwrap();
            let b = bias(&d.params(), &s).unwrap();
            prop_assert!((b - d.cov_eps_y).abs() <= 1e-9 * (1.0 + d.cov_eps_y.abs()));
        }

        #[test]
        fn bias_monotone(rho in 0.0f64..1.0, r2 in 0.0f64..0.99, dr in 0.0f64..0.5, dq in 0.0f64..0.5) {
            let s = scale(2.0, 0.5);
            let b0 = bias(&SensitivityParams::new(rho, r2).unwrap(), &s).unwrap().abs();
            let b1 = bias(&SensitivityParams::new((rho + dr).min(1.0), r2).unwrap(), &s).unwrap().abs();
            let b2 = bias(&SensitivityParams::new(rho, (r2 + dq).min(0.99)).unwrap(), &s).unwrap().abs();
            let bneg = bias(&SensitivityParams::new(-rho, r2).unwrap(), &s).unwrap();
            prop_assert!(b1 >= b0);
            prop_assert!(b2 >= b0);
            prop_assert!(bneg <= 0.0);
        }
    }
}

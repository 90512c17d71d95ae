//! Percentile bootstrap for the sensitivity-adjusted weighted estimate.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{bias, ObservedScale, SensitivityParams};
use crate::calibration::{solve_raking, weighted_mean, CalibrationProblem};
use crate::error::{Error, Result};
use crate::simulation::{stream_rng, Stage};
use crate::stats::quantile_sorted;

pub const MAX_DROP_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    /// Re-solve the calibration weights on every resample.
    #[default]
    Recalibrate,
    /// Reuse the full-sample weights and bias scale; the adjustment is then
    /// the same constant for every draw.
    FixedWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub mode: BootstrapMode,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            alpha: 0.05,
            seed: 0,
            mode: BootstrapMode::Recalibrate,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(Error::Config("bootstrap needs B >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub dropped: usize,
    pub params: SensitivityParams,
    pub mode: BootstrapMode,
    #[serde(skip)]
    pub draws: Vec<f64>,
}

/// Resamples rows with replacement, re-estimates, adjusts each estimate by
/// the bias at `params`, and returns the `alpha/2` and `1 - alpha/2` quantiles.
pub fn bootstrap_interval(
    problem: &CalibrationProblem,
    y: &[f64],
    params: &SensitivityParams,
    cfg: &BootstrapConfig,
) -> Result<BootstrapInterval> {
    cfg.validate()?;
    params.validate()?;
    let n = problem.n();
    if y.len() != n {
        return Err(Error::LengthMismatch {
            what: "outcome vs rows",
            left: y.len(),
            right: n,
        });
    }
    if cfg.replicates < 100 {
        log::warn!("B = {} is below 100; the interval is unreliable", cfg.replicates);
    }
    let full = match cfg.mode {
        BootstrapMode::FixedWeights => {
            let w = solve_raking(problem)?.ensure_converged()?.w;
            let scale = ObservedScale::from_sample(&w, y)?;
            Some((w, bias(params, &scale)?))
        }
        BootstrapMode::Recalibrate => None,
    };

    let draws: Vec<Option<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(cfg.seed, b as u64, Stage::Bootstrap);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let yb: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
            match &full {
                Some((w, shift)) => {
                    let wb: Vec<f64> = rows.iter().map(|&i| w[i]).collect();
                    Ok(Some(weighted_mean(&wb, &yb)? - shift))
                }
                None => {
                    let sub = problem.select_rows(&rows);
                    let w = match solve_raking(&sub) {
                        Ok(w) if w.diagnostics.converged => w.w,
                        Ok(_) | Err(Error::Infeasible { .. }) | Err(Error::NonConvergence { .. }) => return Ok(None),
                        Err(e) => return Err(e),
                    };
                    let scale = ObservedScale::from_sample(&w, &yb)?;
                    Ok(Some(scale.mu_hat - bias(params, &scale)?))
                }
            }
        })
        .collect::<Result<_>>()?;

    let dropped = draws.iter().filter(|d| d.is_none()).count();
    if dropped as f64 > MAX_DROP_SHARE * cfg.replicates as f64 {
        return Err(Error::BootstrapDrops {
            dropped,
            total: cfg.replicates,
        });
    }
    if dropped > 0 {
        log::warn!("{dropped} of {} bootstrap draws dropped", cfg.replicates);
    }
    let mut kept: Vec<f64> = draws.into_iter().flatten().collect();
    if kept.len() == 1 {
        log::warn!("a single bootstrap draw gives a degenerate interval");
    }
    kept.sort_by(|a, b| a.total_cmp(b));
    Ok(BootstrapInterval {
        lower: quantile_sorted(&kept, cfg.alpha / 2.0),
        upper: quantile_sorted(&kept, 1.0 - cfg.alpha / 2.0),
        alpha: cfg.alpha,
        replicates: cfg.replicates,
        dropped,
        params: *params,
        mode: cfg.mode,
        draws: kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn problem() -> (CalibrationProblem, Vec<f64>) {
        let n = 120;
        let a: Vec<f64> = (0..n).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| a[i] * 2.0 + ((i * 37) % 11) as f64 / 5.0).collect();
        let x = DMatrix::from_fn(n, 1, |i, _| a[i]);
        (CalibrationProblem::from_matrix(x, vec![0.5], vec![1.0; n]).unwrap(), y)
    }

    #[test]
    fn single_draw_is_degenerate() {
        let (p, y) = problem();
        let cfg = BootstrapConfig {
            replicates: 1,
            ..BootstrapConfig::default()
        };
        let ci = bootstrap_interval(&p, &y, &SensitivityParams::new(0.0, 0.0).unwrap(), &cfg).unwrap();
        assert_eq!(ci.lower, ci.upper);
    }

    #[test]
    fn fixed_weights_shift_by_bias() {
        let (p, y) = problem();
        let cfg = BootstrapConfig {
            replicates: 200,
            mode: BootstrapMode::FixedWeights,
            seed: 5,
            ..BootstrapConfig::default()
        };
        let zero = SensitivityParams::new(0.0, 0.0).unwrap();
        let params = SensitivityParams::new(0.3, 0.2).unwrap();
        let base = bootstrap_interval(&p, &y, &zero, &cfg).unwrap();
        let adj = bootstrap_interval(&p, &y, &params, &cfg).unwrap();
        let w = solve_raking(&p).unwrap().w;
        let shift = bias(&params, &ObservedScale::from_sample(&w, &y).unwrap()).unwrap();
        assert_abs_diff_eq!(adj.lower, base.lower - shift, epsilon = 1e-12);
        assert_abs_diff_eq!(adj.upper, base.upper - shift, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_and_ordered() {
        let (p, y) = problem();
        let cfg = BootstrapConfig {
            replicates: 150,
            seed: 9,
            ..BootstrapConfig::default()
        };
        let zero = SensitivityParams::new(0.0, 0.0).unwrap();
        let a = bootstrap_interval(&p, &y, &zero, &cfg).unwrap();
        let b = bootstrap_interval(&p, &y, &zero, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.lower < a.upper);
        let est = weighted_mean(&solve_raking(&p).unwrap().w, &y).unwrap();
        assert!(a.lower < est && est < a.upper);
    }

    #[test]
    fn rejects_bad_config() {
        let (p, y) = problem();
        let zero = SensitivityParams::new(0.0, 0.0).unwrap();
        for cfg in [
            BootstrapConfig {
                replicates: 0,
                ..BootstrapConfig::default()
            },
            BootstrapConfig {
                alpha: 1.0,
                ..BootstrapConfig::default()
            },
        ] {
            assert!(bootstrap_interval(&p, &y, &zero, &cfg).unwrap_err().is_config());
        }
    }
}

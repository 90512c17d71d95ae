//! Sensitivity to a partially observed confounder `V`: measured in the
//! sample, absent from the target. The single sensitivity parameter is the
//! population moment `T_V`, added as one more calibration constraint.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{solve_raking, solve_raking_from, weighted_mean, weighted_se, CalibrationProblem};
use crate::data::Frame;
use crate::error::{Error, Result};
use crate::features::TargetSpec;
use crate::stats::{mean, var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub t_v: f64,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub converged: bool,
    /// False when `T_V` lies outside the open range of `V` in the sample.
    pub feasible: bool,
    pub max_violation: Option<f64>,
    /// Achieved `(1/n) sum w_i V_i`.
    pub achieved: Option<f64>,
    #[serde(skip)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialSweep {
    pub variable: String,
    pub baseline_mean_v: f64,
    pub baseline_estimate: f64,
    pub points: Vec<SweepPoint>,
}

/// Rejects `V` that is already a weighting variable or is present in the target.
pub fn ensure_partial(name: &str, problem: &CalibrationProblem, target: Option<&TargetSpec>) -> Result<()> {
    let in_target = match target {
        Some(TargetSpec::Population(f)) => f.column(name).is_some(),
        Some(TargetSpec::Margins(m)) => m.entries.keys().any(|(v, _)| v == name),
        None => false,
    };
    if in_target || problem.sources.iter().any(|s| s.iter().any(|c| c == name)) {
        return Err(Error::Config(format!(
            "`{name}` is available in the target; include it in the weights instead of sweeping it"
        )));
    }
    Ok(())
}

/// Re-solves the weights at each posited `T_V` and records the estimate.
/// The baseline point `(weighted mean of V, baseline estimate)` is always
/// part of the output; infeasible points are flagged, not dropped.
pub fn partial_sweep(
    problem: &CalibrationProblem,
    name: &str,
    v: &[f64],
    y: &[f64],
    grid: &[f64],
) -> Result<PartialSweep> {
    if grid.is_empty() {
        return Err(Error::Invalid("empty sweep grid".into()));
    }
    if v.len() != problem.n() || y.len() != problem.n() {
        return Err(Error::LengthMismatch {
            what: "sweep variable vs rows",
            left: v.len(),
            right: problem.n(),
        });
    }
    let base = solve_raking(problem)?.ensure_converged()?;
    let n = problem.n() as f64;
    let baseline_mean_v = base.w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / n;
    let baseline_estimate = weighted_mean(&base.w, y)?;

    let mut ts: Vec<f64> = grid.to_vec();
    ts.push(baseline_mean_v);
    ts.sort_by(|a, b| a.total_cmp(b));
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);

    let mut warm = base.dual.clone();
    warm.push(0.0);
    let points: Vec<SweepPoint> = ts
        .par_iter()
        .map(|&t| sweep_point(problem, name, v, y, t, &warm))
        .collect::<Result<_>>()?;
    Ok(PartialSweep {
        variable: name.to_string(),
        baseline_mean_v,
        baseline_estimate,
        points,
    })
}

fn sweep_point(
    problem: &CalibrationProblem,
    name: &str,
    v: &[f64],
    y: &[f64],
    t: f64,
    warm: &[f64],
) -> Result<SweepPoint> {
    let augmented = problem.with_constraint(name, v, t)?;
    match solve_raking_from(&augmented, Some(warm)) {
        Ok(w) => {
            let achieved = augmented.achieved(&w.w);
            Ok(SweepPoint {
                t_v: t,
                estimate: Some(weighted_mean(&w.w, y)?),
                se: Some(weighted_se(&w.w, y)?),
                converged: w.diagnostics.converged,
                feasible: true,
                max_violation: Some(w.diagnostics.max_violation),
                achieved: achieved.last().copied(),
                weights: Some(w.w),
            })
        }
        Err(Error::Infeasible { .. }) => Ok(SweepPoint {
            t_v: t,
            estimate: None,
            se: None,
            converged: false,
            feasible: false,
            max_violation: None,
            achieved: None,
            weights: None,
        }),
        Err(e) => Err(e),
    }
}

/// Default grid for a binary `V`: 0 to 1 by 0.01, restricted to the open
/// interval spanned by the sample values.
pub fn binary_grid(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..=100)
        .map(|k| k as f64 / 100.0)
        .filter(|&t| t > lo && t < hi)
        .collect()
}

pub const SD_OFFSETS: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedGrid {
    pub mean: f64,
    pub sd: f64,
    /// `(offset in sd units, T_V)` for the points kept.
    pub points: Vec<(f64, f64)>,
    /// Offsets dropped because they fall outside the sample range of `V`.
    pub trimmed: Vec<f64>,
}

impl StandardizedGrid {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

/// Grid at `mean ± k sd` for a continuous `V`, clipped to its open sample range.
pub fn standardized_grid(v: &[f64]) -> Result<StandardizedGrid> {
    let sd = var(v).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Invalid("V has zero standard deviation".into()));
    }
    let m = mean(v);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut points = Vec::new();
    let mut trimmed = Vec::new();
    for &k in SD_OFFSETS.iter().rev() {
        if k > 0.0 {
            let t = m - k * sd;
            if t > lo {
                points.push((-k, t))
            } else {
                trimmed.push(-k)
            }
        }
    }
    for &k in SD_OFFSETS.iter() {
        let t = m + k * sd;
        if t < hi {
            points.push((k, t))
        } else {
            trimmed.push(k)
        }
    }
    if !trimmed.is_empty() {
        log::info!("standardized grid: offsets {trimmed:?} fall outside the sample range and were dropped");
    }
    Ok(StandardizedGrid {
        mean: m,
        sd,
        points,
        trimmed,
    })
}

/// Weight error from posited population conditional means of a binary `V`.
///
/// `strata[i]` indexes the weighting cell of unit `i`; `posited[s]` is the
/// posited `E(V | cell s)` in the population. The sample conditional mean
/// is estimated from `v` within each cell. Each unit uses the probability of
/// its own value of `V`, so for `V_i = 1` this is
/// `w_i (1 - E(V|x) / E(V|x, S=1))` and for `V_i = 0` the complementary ratio.
pub fn partial_ipw_error(w: &[f64], v: &[f64], strata: &[usize], posited: &[f64]) -> Result<Vec<f64>> {
    if w.len() != v.len() || w.len() != strata.len() {
        return Err(Error::LengthMismatch {
            what: "partial IPW inputs",
            left: w.len(),
            right: v.len().min(strata.len()),
        });
    }
    if v.iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::Invalid("V must be binary (0/1)".into()));
    }
    let k = posited.len();
    let mut count = vec![0.0; k];
    let mut ones = vec![0.0; k];
    for (&s, &vi) in strata.iter().zip(v) {
        if s >= k {
            return Err(Error::Invalid(format!("stratum {s} has no posited mean")));
        }
        count[s] += 1.0;
        ones[s] += vi;
    }
    let sample_mean: Vec<f64> = ones.iter().zip(&count).map(|(o, c)| o / c).collect();
    w.iter()
        .zip(v)
        .zip(strata)
        .map(|((&wi, &vi), &s)| {
            let (pop, smp) = if vi == 1.0 {
                (posited[s], sample_mean[s])
            } else {
                (1.0 - posited[s], 1.0 - sample_mean[s])
            };
            if smp == 0.0 {
                return Err(Error::Invalid(format!(
                    "stratum {s}: zero sample share for V = {vi} with posited mass"
                )));
            }
            Ok(wi * (1.0 - pop / smp))
        })
        .collect()
}

/// Sample range of a column for reporting the feasible sweep interval.
pub fn sample_range(frame: &Frame, name: &str) -> Result<(f64, f64)> {
    let v = frame
        .require(name)?
        .as_numeric()
        .ok_or_else(|| Error::Config(format!("sweep variable `{name}` must be numeric or binary")))?;
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

//! Formal benchmarking of confounding strength against observed covariates.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bias::{bias, ObservedScale, SensitivityParams};
use crate::calibration::{solve_raking, weighted_mean, CalibrationProblem, WeightVector};
use crate::error::{Error, Result};
use crate::stats::{cor, sign, var, Correlation, DEGENERATE_VAR};

/// Benchmark errors with every entry below this are treated as exactly zero;
/// they sit within the calibration solver's own precision.
pub const NEGLIGIBLE_ERROR: f64 = 1e-7;

/// Minimum relative confounding strength; infinite when the benchmark bias is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mrcs(pub f64);

impl Mrcs {
    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

impl std::fmt::Display for Mrcs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() {
            f.write_str("∞")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Mrcs {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("∞")
        }
    }
}

impl<'de> Deserialize<'de> for Mrcs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Mrcs(x)),
            Raw::Str(s) if s == "∞" => Ok(Mrcs(f64::INFINITY)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad MRCS `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub label: String,
    /// `var_S(eps^{-(j)}) / var_S(w)`.
    pub r2_loo: f64,
    /// `r2_loo / (1 + r2_loo)`.
    pub r2_hat: f64,
    pub rho_hat: f64,
    pub rho_degenerate: bool,
    pub est_bias: f64,
    pub mrcs: Mrcs,
}

/// Weights re-solved without any constraint sourced from `covariates`.
pub fn loo_weights(problem: &CalibrationProblem, covariates: &[String]) -> Result<WeightVector> {
    let label = covariates.join("+");
    for c in covariates {
        if !problem.sources.iter().any(|s| s.contains(c)) {
            return Err(Error::Config(format!("`{c}` is not a weighting variable")).with_covariate(&label));
        }
    }
    let reduced = problem.without_sources(covariates);
    solve_raking(&reduced)
        .and_then(WeightVector::ensure_converged)
        .map_err(|e| e.with_covariate(label))
}

pub fn mrcs(mu_hat: f64, b_star: f64, est_bias: f64) -> Mrcs {
    if est_bias == 0.0 {
        Mrcs(f64::INFINITY)
    } else {
        Mrcs((mu_hat - b_star) / est_bias)
    }
}

/// `w_loo - w`, with each entry adjusted by at most a few ulps so that
/// `w_loo[i] - eps[i]` evaluates to exactly `w[i]`.
pub fn loo_error(w: &[f64], w_loo: &[f64]) -> Vec<f64> {
    w_loo
        .iter()
        .zip(w)
        .map(|(&a, &b)| {
            let e = a - b;
            if a - e == b {
                return e;
            }
            let (mut up, mut down) = (e, e);
            for _ in 0..8 {
                up = up.next_up();
                down = down.next_down();
                if a - up == b {
                    return up;
                }
                if a - down == b {
                    return down;
                }
            }
            e
        })
        .collect()
}

/// Benchmark record from full weights `w` and the weights `w_loo` estimated
/// without the benchmarked covariate(s).
pub fn benchmark(label: &str, w: &[f64], w_loo: &[f64], y: &[f64], b_star: f64) -> Result<BenchmarkRecord> {
    if w.len() != w_loo.len() || w.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "benchmark inputs",
            left: w.len(),
            right: w_loo.len().min(y.len()),
        });
    }
    let var_w = var(w);
    if var_w <= DEGENERATE_VAR {
        return Err(Error::Invalid(
            "benchmarking needs non-constant weights (var_S(w) = 0)".into(),
        ));
    }
    let mut eps = loo_error(w, w_loo);
    if eps.iter().all(|e| e.abs() <= NEGLIGIBLE_ERROR) {
        eps.iter_mut().for_each(|e| *e = 0.0);
    }
    let r2_loo = var(&eps) / var_w;
    let r2_hat = r2_loo / (1.0 + r2_loo);
    let rho: Correlation = cor(&eps, y);
    let scale = ObservedScale::from_sample(w, y)?;
    let est_bias = bias(
        &SensitivityParams {
            rho: rho.value,
            r2: r2_hat,
            var_w_star: None,
        },
        &scale,
    )?;
    Ok(BenchmarkRecord {
        label: label.to_string(),
        r2_loo,
        r2_hat,
        rho_hat: rho.value,
        rho_degenerate: rho.degenerate,
        est_bias,
        mrcs: mrcs(scale.mu_hat, b_star, est_bias),
    })
}

/// Benchmarks the joint removal of `covariates`.
pub fn benchmark_subset(
    problem: &CalibrationProblem,
    w: &WeightVector,
    y: &[f64],
    covariates: &[String],
    b_star: f64,
) -> Result<BenchmarkRecord> {
    let loo = loo_weights(problem, covariates)?;
    benchmark(&covariates.join("+"), &w.w, &loo.w, y, b_star)
}

/// Benchmarks every single covariate, computed concurrently and ordered by label.
pub fn benchmark_all(
    problem: &CalibrationProblem,
    w: &WeightVector,
    y: &[f64],
    covariates: &[String],
    b_star: f64,
) -> Result<Vec<BenchmarkRecord>> {
    let mut out = covariates
        .par_iter()
        .map(|c| benchmark_subset(problem, w, y, std::slice::from_ref(c), b_star))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(out)
}

/// Benchmarks against the base (design) weights: the whole weighting adjustment.
pub fn benchmark_design_weights(
    problem: &CalibrationProblem,
    w: &WeightVector,
    y: &[f64],
    b_star: f64,
) -> Result<BenchmarkRecord> {
    let q = WeightVector::from_weights(problem.base_weights.clone())?;
    benchmark("design weights", &w.w, &q.w, y, b_star)
}

/// Sensitivity parameters for a confounder `k_sigma` times as imbalanced and
/// `k_rho` times as aligned as the benchmark.
pub fn scaled_params(k_sigma: f64, k_rho: f64, r2_loo: f64, rho_loo: f64) -> Result<SensitivityParams> {
    if !(k_sigma >= 0.0) {
        return Err(Error::Invalid(format!("k_sigma = {k_sigma} must be non-negative")));
    }
    let rho = k_rho * rho_loo;
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Invalid(format!(
            "scaled rho = {rho} is outside [-1, 1]; reduce k_rho"
        )));
    }
    let r2 = k_sigma * r2_loo / (1.0 + k_sigma * r2_loo);
    SensitivityParams::new(rho, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinK {
    pub k_sigma: f64,
    pub k_rho: f64,
}

/// Smallest multipliers putting the scaled parameters at `rho^2 = R^2 = RV`,
/// with the sign of `k_rho` chosen so the bias points toward `b*`
/// (`gap = mu_hat - b*`).
pub fn min_k(r2_loo: f64, rho_loo: f64, rv: f64, gap: f64) -> Result<MinK> {
    if r2_loo <= 0.0 || rho_loo == 0.0 {
        return Err(Error::Invalid(
            "benchmark has zero imbalance or zero alignment; no finite multiplier".into(),
        ));
    }
    if !(0.0..1.0).contains(&rv) {
        return Err(Error::Invalid(format!("RV = {rv} outside [0, 1)")));
    }
    let direction = if gap == 0.0 { 1.0 } else { sign(gap) * sign(rho_loo) };
    Ok(MinK {
        k_sigma: rv / ((1.0 - rv) * r2_loo),
        k_rho: direction * rv.sqrt() / rho_loo.abs(),
    })
}

/// The point estimate the benchmark record implies after adjustment.
pub fn benchmark_adjusted(w: &[f64], y: &[f64], rec: &BenchmarkRecord) -> Result<f64> {
    Ok(weighted_mean(w, y)? - rec.est_bias)
}

//! Entropy (raking) calibration weights.
//!
//! Minimizes `sum_i w_i log(w_i / q_i)` subject to `(1/n) sum_i w_i phi(X_i) = T`
//! and `mean(w) = 1`. The solution has the exponential-tilting form
//! `w_i ∝ q_i exp(lambda' (phi(X_i) - T))`, so the solver works on the
//! convex dual `f(lambda) = log sum_i q_i exp(lambda' (phi(X_i) - T))`,
//! whose gradient is the constraint violation and whose Hessian is the
//! tilted covariance of the features.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Features;
use crate::linalg::independent_columns;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Reciprocal condition number below which Newton steps give way to
/// coordinate-wise (IPF-style) updates.
const ILL_CONDITIONED: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    pub names: Vec<String>,
    /// Source variables behind each constraint column.
    pub sources: Vec<Vec<String>>,
    pub x: DMatrix<f64>,
    pub targets: Vec<f64>,
    pub base_weights: Vec<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
    /// Optional cap on weights (as a multiple of the mean), applied after solving.
    pub cap: Option<f64>,
}

impl CalibrationProblem {
    pub fn new(features: &Features, base_weights: Vec<f64>) -> Result<Self> {
        let p = CalibrationProblem {
            names: features.names.clone(),
            sources: features.sources.clone(),
            x: features.x.clone(),
            targets: features.targets.clone(),
            base_weights,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
            cap: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Problem from raw columns; names default to `c0, c1, ...`.
    pub fn from_matrix(x: DMatrix<f64>, targets: Vec<f64>, base_weights: Vec<f64>) -> Result<Self> {
        let names: Vec<String> = (0..x.ncols()).map(|j| format!("c{j}")).collect();
        let sources = names.iter().map(|n| vec![n.clone()]).collect();
        let p = CalibrationProblem {
            names,
            sources,
            x,
            targets,
            base_weights,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
            cap: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.ncols() != self.targets.len() {
            return Err(Error::LengthMismatch {
                what: "design columns vs targets",
                left: self.x.ncols(),
                right: self.targets.len(),
            });
        }
        if self.names.len() != self.targets.len() || self.sources.len() != self.targets.len() {
            return Err(Error::LengthMismatch {
                what: "constraint names vs targets",
                left: self.names.len(),
                right: self.targets.len(),
            });
        }
        if self.x.nrows() != self.base_weights.len() {
            return Err(Error::LengthMismatch {
                what: "design rows vs base weights",
                left: self.x.nrows(),
                right: self.base_weights.len(),
            });
        }
        if let Some(i) = self.base_weights.iter().position(|&q| !(q > 0.0 && q.is_finite())) {
            return Err(Error::Invalid(format!("base weight {i} is not strictly positive")));
        }
        Ok(())
    }

    /// Keeps only the constraint columns for which `keep` returns true.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> CalibrationProblem {
        let idx: Vec<usize> = (0..self.targets.len()).filter(|&j| keep(j)).collect();
        CalibrationProblem {
            names: idx.iter().map(|&j| self.names[j].clone()).collect(),
            sources: idx.iter().map(|&j| self.sources[j].clone()).collect(),
            x: self.x.select_columns(&idx),
            targets: idx.iter().map(|&j| self.targets[j]).collect(),
            base_weights: self.base_weights.clone(),
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            cap: self.cap,
        }
    }

    /// Problem on the given rows (repeats allowed), targets unchanged.
    pub fn select_rows(&self, rows: &[usize]) -> CalibrationProblem {
        CalibrationProblem {
            x: self.x.select_rows(rows),
            base_weights: rows.iter().map(|&i| self.base_weights[i]).collect(),
            ..self.clone()
        }
    }

    /// Drops every constraint sourced from any of `vars`.
    pub fn without_sources(&self, vars: &[String]) -> CalibrationProblem {
        self.select(|j| !self.sources[j].iter().any(|s| vars.contains(s)))
    }

    /// Appends one constraint column.
    pub fn with_constraint(&self, name: &str, values: &[f64], target: f64) -> Result<Self> {
        if values.len() != self.n() {
            return Err(Error::LengthMismatch {
                what: "constraint values vs rows",
                left: values.len(),
                right: self.n(),
            });
        }
        let mut x = self.x.clone().insert_column(self.x.ncols(), 0.0);
        x.set_column(self.x.ncols(), &DVector::from_column_slice(values));
        let mut p = self.clone();
        p.x = x;
        p.names.push(name.to_string());
        p.sources.push(vec![name.to_string()]);
        p.targets.push(target);
        Ok(p)
    }

    /// Achieved weighted means `(1/n) sum_i w_i phi_j(X_i)`.
    pub fn achieved(&self, w: &[f64]) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.x.ncols())
            .map(|j| self.x.column(j).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / n)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Newton,
    Coordinate,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub max_violation: f64,
    pub dual_norm: f64,
    pub converged: bool,
    /// Last step method used (Newton unless the Hessian was ill-conditioned).
    pub method: Method,
    /// Constraints dropped as linearly dependent on the others.
    pub dropped: Vec<String>,
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub constraint_ids: Vec<String>,
    /// Dual solution in original feature units (zero for dropped columns).
    #[serde(skip)]
    pub dual: Vec<f64>,
}

impl WeightVector {
    /// Mean-1 weights with no solver provenance.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Invalid("empty weight vector".into()));
        }
        if let Some(i) = w.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Invalid(format!("weight {i} is not strictly positive")));
        }
        let m = w.iter().sum::<f64>() / w.len() as f64;
        Ok(WeightVector {
            w: w.iter().map(|x| x / m).collect(),
            diagnostics: Diagnostics {
                iterations: 0,
                max_violation: 0.0,
                dual_norm: 0.0,
                converged: true,
                method: Method::None,
                dropped: Vec::new(),
                capped: false,
            },
            constraint_ids: Vec::new(),
            dual: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    /// Turns a flagged non-converged solve into an error.
    pub fn ensure_converged(self) -> Result<Self> {
        if self.diagnostics.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.diagnostics.iterations,
                max_violation: self.diagnostics.max_violation,
            })
        }
    }
}

struct Dual<'a> {
    z: &'a DMatrix<f64>,
    log_q: Vec<f64>,
}

struct Eval {
    f: f64,
    p: DVector<f64>,
}

impl Dual<'_> {
    fn eval(&self, lambda: &DVector<f64>) -> Eval {
        let eta = self.z * lambda;
        let a: Vec<f64> = eta.iter().zip(&self.log_q).map(|(e, l)| e + l).collect();
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = a.iter().map(|v| (v - m).exp()).sum();
        let p = DVector::from_iterator(a.len(), a.iter().map(|v| (v - m).exp() / s));
        Eval { f: m + s.ln(), p }
    }

    fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        self.z.tr_mul(p)
    }

    fn hessian(&self, p: &DVector<f64>, g: &DVector<f64>) -> DMatrix<f64> {
        let mut zp = self.z.clone();
        for (mut row, &pi) in zp.row_iter_mut().zip(p.iter()) {
            row *= pi;
        }
        let mut h = self.z.tr_mul(&zp);
        h.ger(-1.0, g, g, 1.0);
        h
    }
}

/// Checks each constraint's target against the range its column attains.
fn check_marginal_feasibility(problem: &CalibrationProblem, active: &[bool]) -> Result<()> {
    for (j, &on) in active.iter().enumerate() {
        if !on {
            continue;
        }
        let col = problem.x.column(j);
        let min = col.min();
        let max = col.max();
        let t = problem.targets[j];
        let slack = problem.tolerance * (1.0 + t.abs());
        if !(t > min + slack && t < max - slack) {
            return Err(Error::Infeasible {
                constraint: problem.names[j].clone(),
                target: t,
                min,
                max,
            });
        }
    }
    Ok(())
}

/// Solves for raking weights, starting from `lambda = 0`.
pub fn solve_raking(problem: &CalibrationProblem) -> Result<WeightVector> {
    solve_raking_from(problem, None)
}

/// Solves for raking weights, optionally warm-started from a dual solution
/// in original feature units (as stored in [`WeightVector::dual`]).
pub fn solve_raking_from(problem: &CalibrationProblem, warm: Option<&[f64]>) -> Result<WeightVector> {
    problem.validate()?;
    let n = problem.n();
    let p_all = problem.targets.len();

    let active = independent_columns(&problem.x);
    let dropped: Vec<String> = active
        .iter()
        .zip(&problem.names)
        .filter(|(k, _)| !**k)
        .map(|(_, n)| n.clone())
        .collect();
    if !dropped.is_empty() {
        warn!("dropping linearly dependent constraints: {}", dropped.join(", "));
    }
    check_marginal_feasibility(problem, &active)?;
    let kept: Vec<usize> = (0..p_all).filter(|&j| active[j]).collect();
    let p = kept.len();

    // standardized, target-centered constraint columns
    let mut scale = Vec::with_capacity(p);
    let mut z = DMatrix::zeros(n, p);
    for (k, &j) in kept.iter().enumerate() {
        let col = problem.x.column(j);
        let mean = col.mean();
        let sd = (col.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        scale.push(sd);
        let t = problem.targets[j];
        for i in 0..n {
            z[(i, k)] = (col[i] - t) / sd;
        }
    }
    let dual = Dual {
        z: &z,
        log_q: problem.base_weights.iter().map(|q| q.ln()).collect(),
    };

    let mut lambda = DVector::zeros(p);
    if let Some(init) = warm {
        if init.len() == p_all {
            for (k, &j) in kept.iter().enumerate() {
                lambda[k] = init[j] * scale[k];
            }
        }
    }

    let violation =
        |g: &DVector<f64>| -> f64 { g.iter().zip(&scale).map(|(gi, s)| (gi * s).abs()).fold(0.0, f64::max) };

    let mut cur = dual.eval(&lambda);
    let mut g = dual.gradient(&cur.p);
    let mut iterations = 0;
    let mut method = Method::Newton;
    let mut converged = p == 0 || violation(&g) <= problem.tolerance;

    while !converged && iterations < problem.max_iter {
        iterations += 1;
        let h = dual.hessian(&cur.p, &g);
        let direction = newton_direction(&h, &g);
        let moved = match direction {
            Some(d) => {
                method = Method::Newton;
                full_step(&dual, &lambda, &cur, &g, &d).or_else(|| line_search(&dual, &lambda, &cur, &g, &d))
            }
            None => {
                method = Method::Coordinate;
                coordinate_sweep(&dual, &lambda, &cur, &h, &g)
            }
        };
        let Some((next_lambda, next)) = moved else { break };
        debug_assert!(
            next.f <= cur.f + 1e-12 * cur.f.abs().max(1.0),
            "dual objective increased"
        );
        lambda = next_lambda;
        cur = next;
        g = dual.gradient(&cur.p);
        converged = violation(&g) <= problem.tolerance;
    }

    let mut w: Vec<f64> = cur.p.iter().map(|pi| pi * n as f64).collect();
    let mut dual_orig = vec![0.0; p_all];
    for (k, &j) in kept.iter().enumerate() {
        dual_orig[j] = lambda[k] / scale[k];
    }

    // dropped constraints must still hold; otherwise the targets are inconsistent
    let achieved = problem.achieved(&w);
    let max_violation = achieved
        .iter()
        .zip(&problem.targets)
        .map(|(a, t)| (a - t).abs())
        .fold(0.0, f64::max);
    if converged {
        for j in (0..p_all).filter(|&j| !active[j]) {
            let gap = (achieved[j] - problem.targets[j]).abs();
            if gap > 1e3 * problem.tolerance * (1.0 + problem.targets[j].abs()) {
                return Err(Error::Infeasible {
                    constraint: problem.names[j].clone(),
                    target: problem.targets[j],
                    min: achieved[j],
                    max: achieved[j],
                });
            }
        }
    } else {
        warn!("raking did not converge after {iterations} iterations (max violation {max_violation:e})");
    }

    let mut capped = false;
    if let Some(cap) = problem.cap {
        capped = trim_weights(&mut w, cap);
    }

    Ok(WeightVector {
        w,
        diagnostics: Diagnostics {
            iterations,
            max_violation,
            dual_norm: dual_orig.iter().map(|v| v * v).sum::<f64>().sqrt(),
            converged,
            method,
            dropped,
            capped,
        },
        constraint_ids: problem.names.clone(),
        dual: dual_orig,
    })
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let diag_max = h.diagonal().iter().cloned().fold(0.0, f64::max);
    if diag_max <= 0.0 {
        return None;
    }
    let chol = Cholesky::new(h.clone())?;
    let l = chol.l();
    let dmin = l.diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
    let dmax = l.diagonal().iter().cloned().fold(0.0, f64::max);
    if (dmin / dmax).powi(2) < ILL_CONDITIONED {
        return None;
    }
    Some(-chol.solve(g))
}

/// Accepts the undamped Newton step when it at least halves the gradient
/// without raising the objective beyond rounding. Near the optimum the
/// decrease falls below the objective's rounding error, so the Armijo test
/// alone stalls there.
fn full_step(
    dual: &Dual,
    lambda: &DVector<f64>,
    cur: &Eval,
    g: &DVector<f64>,
    d: &DVector<f64>,
) -> Option<(DVector<f64>, Eval)> {
    let trial = lambda + d;
    let e = dual.eval(&trial);
    if e.f > cur.f + 1e-12 * cur.f.abs().max(1.0) {
        return None;
    }
    let g_next = dual.gradient(&e.p);
    (g_next.norm() <= 0.5 * g.norm()).then_some((trial, e))
}

fn line_search(
    dual: &Dual,
    lambda: &DVector<f64>,
    cur: &Eval,
    g: &DVector<f64>,
    d: &DVector<f64>,
) -> Option<(DVector<f64>, Eval)> {
    let slope = g.dot(d);
    if slope >= 0.0 {
        return None;
    }
    let mut t = 1.0;
    for _ in 0..60 {
        let trial = lambda + d * t;
        let e = dual.eval(&trial);
        if e.f <= cur.f + 1e-4 * t * slope {
            return Some((trial, e));
        }
        t *= 0.5;
    }
    None
}

/// One pass of one-dimensional Newton steps over each coordinate.
fn coordinate_sweep(
    dual: &Dual,
    lambda: &DVector<f64>,
    cur: &Eval,
    h: &DMatrix<f64>,
    g: &DVector<f64>,
) -> Option<(DVector<f64>, Eval)> {
    let mut lam = lambda.clone();
    let mut state = Eval {
        f: cur.f,
        p: cur.p.clone(),
    };
    let mut grad = g.clone();
    let mut moved = false;
    for j in 0..lam.len() {
        let hj = if moved {
            let zj = dual.z.column(j);
            let m: f64 = zj.iter().zip(state.p.iter()).map(|(a, b)| a * b).sum();
            zj.iter().zip(state.p.iter()).map(|(a, b)| b * (a - m) * (a - m)).sum()
        } else {
            h[(j, j)]
        };
        if hj <= 0.0 {
            continue;
        }
        let mut d = DVector::zeros(lam.len());
        d[j] = -grad[j] / hj;
        if let Some((next_lam, next)) = line_search(dual, &lam, &state, &grad, &d) {
            lam = next_lam;
            state = next;
            grad = dual.gradient(&state.p);
            moved = true;
        }
    }
    moved.then_some((lam, state))
}

/// Caps weights at `cap` times the mean, redistributing the excess; returns
/// whether any weight was capped. Constraints may no longer hold exactly.
fn trim_weights(w: &mut [f64], cap: f64) -> bool {
    let n = w.len() as f64;
    let mut any = false;
    for _ in 0..100 {
        let mean = w.iter().sum::<f64>() / n;
        let limit = cap * mean;
        let over: Vec<usize> = (0..w.len()).filter(|&i| w[i] > limit * (1.0 + 1e-12)).collect();
        if over.is_empty() {
            break;
        }
        any = true;
        for i in over {
            w[i] = limit;
        }
    }
    let mean = w.iter().sum::<f64>() / n;
    for x in w.iter_mut() {
        *x /= mean;
    }
    any
}

/// Hájek weighted mean `sum w_i y_i / sum w_i`.
pub fn weighted_mean(w: &[f64], y: &[f64]) -> Result<f64> {
    if w.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "weights vs outcome",
            left: w.len(),
            right: y.len(),
        });
    }
    let sw: f64 = w.iter().sum();
    Ok(w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sw)
}

/// Approximate design-based standard error of the Hájek mean,
/// `sqrt(sum w_i^2 (y_i - mu)^2) / sum w_i`.
pub fn weighted_se(w: &[f64], y: &[f64]) -> Result<f64> {
    if w.len() < 2 {
        return Err(Error::TooFewRows(w.len()));
    }
    let mu = weighted_mean(w, y)?;
    let sw: f64 = w.iter().sum();
    let num: f64 = w.iter().zip(y).map(|(a, b)| a * a * (b - mu) * (b - mu)).sum();
    Ok(num.sqrt() / sw)
}

/// Inverse-probability weights `w_i ∝ 1 / p_i`, normalized to mean 1.
pub fn oracle_ipw(selection_probs: &[f64]) -> Result<WeightVector> {
    if let Some(i) = selection_probs.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::Invalid(format!(
            "selection probability {} at {i} is outside (0, 1]",
            selection_probs[i]
        )));
    }
    WeightVector::from_weights(selection_probs.iter().map(|p| 1.0 / p).collect())
}

//! L1-penalized nodewise regressions by coordinate descent.
//!
//! Predictors are standardized before fitting so one penalty applies to all
//! columns. Gaussian fits work on the Gram matrix; multinomial fits take
//! per-class Newton steps, each solved as a weighted Gram problem.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CD_TOL: f64 = 1e-7;
const CD_MAX_SWEEPS: usize = 10_000;
const NEWTON_MAX: usize = 100;
const PROB_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Gaussian(Vec<f64>),
    /// Class index per row and number of classes.
    Multinomial {
        class: Vec<usize>,
        k: usize,
    },
}

impl Response {
    fn n(&self) -> usize {
        match self {
            Response::Gaussian(y) => y.len(),
            Response::Multinomial { class, .. } => class.len(),
        }
    }

    fn take(&self, rows: &[usize]) -> Response {
        match self {
            Response::Gaussian(y) => Response::Gaussian(rows.iter().map(|&i| y[i]).collect()),
            Response::Multinomial { class, k } => Response::Multinomial {
                class: rows.iter().map(|&i| class[i]).collect(),
                k: *k,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum LambdaPolicy {
    /// K-fold cross-validation with the one-standard-error rule.
    CrossValidation {
        folds: usize,
        seed: u64,
    },
    Fixed(f64),
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::CrossValidation { folds: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    /// Coefficients on the standardized scale, one column per class
    /// (a single column for gaussian responses).
    pub beta: DMatrix<f64>,
    pub intercept: Vec<f64>,
    pub converged: bool,
    /// Fitted probabilities reached 0 or 1 (quasi-separation).
    pub separation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFit {
    pub lambda: f64,
    pub fit: Fit,
    /// Cross-validated loss per path value, if computed.
    pub cv: Option<(Vec<f64>, Vec<f64>)>,
    pub lambdas: Vec<f64>,
}

/// Column-standardized copy of `x` (population sd); zero-variance columns become 0.
pub fn standardize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut z = x.clone();
    for mut col in z.column_iter_mut() {
        let m = col.sum() / n;
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        for v in col.iter_mut() {
            *v = if sd > 0.0 { (*v - m) / sd } else { 0.0 };
        }
    }
    z
}

/// Minimizes `0.5 b'Gb - c'b + lambda |b|_1` in place. Returns whether the
/// largest coefficient change fell below `CD_TOL`.
pub fn cd_quadratic(g: &DMatrix<f64>, c: &DVector<f64>, lambda: f64, beta: &mut DVector<f64>) -> bool {
    let p = c.len();
    let mut grad = c - g * &*beta;
    let sweep = |beta: &mut DVector<f64>, grad: &mut DVector<f64>, active_only: bool| -> f64 {
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            if active_only && beta[j] == 0.0 {
                continue;
            }
            let gjj = g[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let r = grad[j] + gjj * beta[j];
            let new = soft(r, lambda) / gjj;
            let delta = new - beta[j];
            if delta != 0.0 {
                beta[j] = new;
                for k in 0..p {
                    grad[k] -= g[(k, j)] * delta;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    };
    for _ in 0..CD_MAX_SWEEPS {
        if sweep(beta, &mut grad, false) < CD_TOL {
            return true;
        }
        // iterate on the active set until it settles, then re-check all
        for _ in 0..CD_MAX_SWEEPS {
            if sweep(beta, &mut grad, true) < CD_TOL {
                break;
            }
        }
    }
    false
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn gram(z: &DMatrix<f64>, w: Option<&[f64]>) -> DMatrix<f64> {
    let n = z.nrows() as f64;
    match w {
        None => z.tr_mul(z) / n,
        Some(w) => {
            let mut zw = z.clone();
            for (i, mut row) in zw.row_iter_mut().enumerate() {
                row *= w[i];
            }
            z.tr_mul(&zw) / n
        }
    }
}

/// Largest penalty with a nonzero coefficient.
pub fn lambda_max(z: &DMatrix<f64>, y: &Response) -> f64 {
    let n = z.nrows() as f64;
    match y {
        Response::Gaussian(y) => {
            let m = y.iter().sum::<f64>() / n;
            let r = DVector::from_iterator(y.len(), y.iter().map(|v| v - m));
            (z.tr_mul(&r) / n).amax()
        }
        Response::Multinomial { class, k } => {
            let mut best: f64 = 0.0;
            for c in 0..*k {
                let p = class.iter().filter(|&&v| v == c).count() as f64 / n;
                let r = DVector::from_iterator(class.len(), class.iter().map(|&v| (v == c) as u8 as f64 - p));
                best = best.max((z.tr_mul(&r) / n).amax());
            }
            best
        }
    }
}

pub fn lambda_path(lmax: f64, len: usize, ratio: f64) -> Vec<f64> {
    if len == 1 {
        return vec![lmax];
    }
    (0..len)
        .map(|t| lmax * ratio.powf(t as f64 / (len - 1) as f64))
        .collect()
}

fn column_means(z: &DMatrix<f64>) -> DVector<f64> {
    let n = z.nrows() as f64;
    DVector::from_iterator(z.ncols(), z.column_iter().map(|c| c.sum() / n))
}

fn fit_gaussian(z: &DMatrix<f64>, y: &[f64], lambda: f64, warm: Option<&Fit>) -> Fit {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let xbar = column_means(z);
    let mut zc = z.clone();
    for mut row in zc.row_iter_mut() {
        row -= xbar.transpose();
    }
    let r = DVector::from_iterator(y.len(), y.iter().map(|v| v - m));
    let g = gram(&zc, None);
    let c = zc.tr_mul(&r) / n;
    let mut beta = warm
        .map(|f| f.beta.column(0).into_owned())
        .unwrap_or_else(|| DVector::zeros(z.ncols()));
    let converged = cd_quadratic(&g, &c, lambda, &mut beta);
    Fit {
        beta: DMatrix::from_column_slice(z.ncols(), 1, beta.as_slice()),
        intercept: vec![m - xbar.dot(&beta)],
        converged,
        separation: false,
    }
}

fn probabilities(z: &DMatrix<f64>, beta: &DMatrix<f64>, b0: &[f64]) -> DMatrix<f64> {
    let mut eta = z * beta;
    for mut row in eta.row_iter_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v += b0[k];
        }
        let mx = row.max();
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        row /= s;
    }
    eta
}

fn fit_multinomial(z: &DMatrix<f64>, class: &[usize], k: usize, lambda: f64, warm: Option<&Fit>) -> Fit {
    let n = class.len();
    let nf = n as f64;
    let p = z.ncols();
    let (mut beta, mut b0) = match warm {
        Some(f) => (f.beta.clone(), f.intercept.clone()),
        None => {
            let b0 = (0..k)
                .map(|c| {
                    let f = class.iter().filter(|&&v| v == c).count() as f64 / nf;
                    f.max(PROB_FLOOR).ln()
                })
                .collect();
            (DMatrix::zeros(p, k), b0)
        }
    };
    let mut converged = false;
    let mut separation = false;
    for _ in 0..NEWTON_MAX {
        let mut max_delta: f64 = 0.0;
        for c in 0..k {
            let prob = probabilities(z, &beta, &b0);
            let mut w = vec![0.0; n];
            let mut zr = vec![0.0; n];
            for i in 0..n {
                let pi = prob[(i, c)];
                if !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&pi) {
                    separation = true;
                }
                let wi = (pi * (1.0 - pi)).max(1e-5);
                let yi = (class[i] == c) as u8 as f64;
                let eta: f64 = b0[c] + z.row(i).dot(&beta.column(c).transpose());
                w[i] = wi;
                zr[i] = eta + (yi - pi) / wi;
            }
            // weighted centering absorbs the unpenalized intercept
            let sw: f64 = w.iter().sum();
            let zbar: f64 = w.iter().zip(&zr).map(|(a, b)| a * b).sum::<f64>() / sw;
            let xbar: DVector<f64> =
                DVector::from_iterator(p, (0..p).map(|j| (0..n).map(|i| w[i] * z[(i, j)]).sum::<f64>() / sw));
            let mut zc = z.clone();
            for mut row in zc.row_iter_mut() {
                row -= xbar.transpose();
            }
            let g = gram(&zc, Some(&w));
            let rc = DVector::from_iterator(n, (0..n).map(|i| w[i] * (zr[i] - zbar)));
            let cvec = zc.tr_mul(&rc) / nf;
            let mut bc = beta.column(c).into_owned();
            let old = bc.clone();
            cd_quadratic(&g, &cvec, lambda, &mut bc);
            let new_b0 = zbar - xbar.dot(&bc);
            max_delta = max_delta.max((&bc - &old).amax()).max((new_b0 - b0[c]).abs());
            beta.set_column(c, &bc);
            b0[c] = new_b0;
        }
        if max_delta < CD_TOL {
            converged = true;
            break;
        }
    }
    Fit {
        beta,
        intercept: b0,
        converged,
        separation,
    }
}

pub fn fit(z: &DMatrix<f64>, y: &Response, lambda: f64, warm: Option<&Fit>) -> Fit {
    match y {
        Response::Gaussian(v) => fit_gaussian(z, v, lambda, warm),
        Response::Multinomial { class, k } => fit_multinomial(z, class, *k, lambda, warm),
    }
}

/// Mean squared error or mean multinomial deviance on held-out rows.
pub fn loss(z: &DMatrix<f64>, y: &Response, f: &Fit) -> f64 {
    let n = z.nrows() as f64;
    match y {
        Response::Gaussian(v) => {
            let pred = z * &f.beta;
            v.iter()
                .enumerate()
                .map(|(i, &yi)| (yi - f.intercept[0] - pred[(i, 0)]).powi(2))
                .sum::<f64>()
                / n
        }
        Response::Multinomial { class, .. } => {
            let prob = probabilities(z, &f.beta, &f.intercept);
            class
                .iter()
                .enumerate()
                .map(|(i, &c)| -2.0 * prob[(i, c)].max(PROB_FLOOR).ln())
                .sum::<f64>()
                / n
        }
    }
}

fn take_rows(z: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), z.ncols(), |i, j| z[(rows[i], j)])
}

pub const PATH_LEN: usize = 40;
pub const PATH_RATIO: f64 = 1e-3;

/// Fits along a decreasing penalty path and picks the penalty by policy.
/// `z` must already be standardized.
pub fn select(z: &DMatrix<f64>, y: &Response, policy: LambdaPolicy) -> Result<PathFit> {
    let n = y.n();
    if z.nrows() != n {
        return Err(Error::LengthMismatch {
            what: "design vs response",
            left: z.nrows(),
            right: n,
        });
    }
    match policy {
        LambdaPolicy::Fixed(lambda) => {
            if !(lambda >= 0.0) {
                return Err(Error::Config(format!("lambda = {lambda} must be non-negative")));
            }
            Ok(PathFit {
                lambda,
                fit: fit(z, y, lambda, None),
                cv: None,
                lambdas: vec![lambda],
            })
        }
        LambdaPolicy::CrossValidation { folds, seed } => {
            if folds < 2 || folds > n {
                return Err(Error::Config(format!("cannot run {folds}-fold CV on {n} rows")));
            }
            let lmax = lambda_max(z, y);
            if !(lmax > 0.0) {
                return Ok(PathFit {
                    lambda: 0.0,
                    fit: fit(z, y, 0.0, None),
                    cv: None,
                    lambdas: vec![0.0],
                });
            }
            let lambdas = lambda_path(lmax, PATH_LEN, PATH_RATIO);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut fold_of = vec![0usize; n];
            for (pos, &i) in order.iter().enumerate() {
                fold_of[i] = pos % folds;
            }
            let mut errs = vec![vec![0.0; folds]; lambdas.len()];
            #[allow(clippy::needless_range_loop)]
            for f in 0..folds {
                let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
                let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
                let (zt, yt) = (take_rows(z, &train), y.take(&train));
                let (zv, yv) = (take_rows(z, &test), y.take(&test));
                let mut warm: Option<Fit> = None;
                for (l, &lambda) in lambdas.iter().enumerate() {
                    let ft = fit(&zt, &yt, lambda, warm.as_ref());
                    errs[l][f] = loss(&zv, &yv, &ft);
                    warm = Some(ft);
                }
            }
            let kf = folds as f64;
            let means: Vec<f64> = errs.iter().map(|e| e.iter().sum::<f64>() / kf).collect();
            let ses: Vec<f64> = errs
                .iter()
                .zip(&means)
                .map(|(e, m)| (e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt() / kf.sqrt())
                .collect();
            let best = (0..lambdas.len())
                .min_by(|&a, &b| means[a].total_cmp(&means[b]))
                .unwrap_or(0);
            let bound = means[best] + ses[best];
            // largest penalty whose CV loss is within one SE of the minimum
            let chosen = (0..=best).find(|&l| means[l] <= bound).unwrap_or(best);
            let mut warm: Option<Fit> = None;
            for &lambda in &lambdas[..=chosen] {
                warm = Some(fit(z, y, lambda, warm.as_ref()));
            }
            Ok(PathFit {
                lambda: lambdas[chosen],
                fit: warm.expect("path is non-empty"),
                cv: Some((means, ses)),
                lambdas,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    #[test]
    fn orthogonal_design_soft_thresholds() {
        // G = I: solution is soft(c, lambda)
        let g = DMatrix::identity(3, 3);
        let c = DVector::from_vec(vec![0.5, -0.05, -0.3]);
        let mut b = DVector::zeros(3);
        assert!(cd_quadratic(&g, &c, 0.1, &mut b));
        assert_abs_diff_eq!(b[0], 0.4, epsilon = 1e-12);
        assert_eq!(b[1], 0.0);
        assert_abs_diff_eq!(b[2], -0.2, epsilon = 1e-12);
    }

    #[test]
    fn zero_penalty_is_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let x = DMatrix::from_fn(n, 2, |_, _| normal(&mut rng));
        let z = standardize(&x);
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 2.0 * z[(i, 0)] - z[(i, 1)] + 0.1 * normal(&mut rng))
            .collect();
        let f = fit(&z, &Response::Gaussian(y.clone()), 0.0, None);
        // normal equations on centered data
        let m = y.iter().sum::<f64>() / n as f64;
        let r = DVector::from_iterator(n, y.iter().map(|v| v - m));
        let ols = (z.tr_mul(&z)).lu().solve(&z.tr_mul(&r)).unwrap();
        assert_abs_diff_eq!(f.beta[(0, 0)], ols[0], epsilon = 1e-6);
        assert_abs_diff_eq!(f.beta[(1, 0)], ols[1], epsilon = 1e-6);
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = standardize(&DMatrix::from_fn(100, 3, |_, _| normal(&mut rng)));
        let y = Response::Gaussian((0..100).map(|i| z[(i, 1)] + normal(&mut rng)).collect());
        let lm = lambda_max(&z, &y);
        assert!(fit(&z, &y, lm * 1.0001, None).beta.iter().all(|&b| b == 0.0));
        assert!(fit(&z, &y, lm * 0.9, None).beta.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn multinomial_recovers_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 600;
        let x = DMatrix::from_fn(n, 3, |_, _| normal(&mut rng));
        let class: Vec<usize> = (0..n)
            .map(|i| {
                let e = [0.0, 2.0 * x[(i, 0)], -2.0 * x[(i, 0)]];
                let s: f64 = e.iter().map(|v| v.exp()).sum();
                let u: f64 = rng.random::<f64>() * s;
                let mut acc = 0.0;
                e.iter()
                    .position(|v| {
                        acc += v.exp();
                        u < acc
                    })
                    .unwrap_or(2)
            })
            .collect();
        let y = Response::Multinomial { class, k: 3 };
        let pf = select(&standardize(&x), &y, LambdaPolicy::default()).unwrap();
        let norm = |j: usize| pf.fit.beta.row(j).norm();
        assert!(norm(0) > 0.5);
        assert!(norm(1) < 0.1 && norm(2) < 0.1);
        assert!(pf.fit.converged);
    }

    #[test]
    fn cv_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(150, 4, |_, _| normal(&mut rng));
        let z = standardize(&x);
        let y = Response::Gaussian((0..150).map(|i| z[(i, 0)] + normal(&mut rng)).collect());
        let a = select(&z, &y, LambdaPolicy::CrossValidation { folds: 10, seed: 1 }).unwrap();
        let b = select(&z, &y, LambdaPolicy::CrossValidation { folds: 10, seed: 1 }).unwrap();
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.fit.beta, b.fit.beta);
    }

    #[test]
    fn standardize_handles_constant_column() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 4.0, 1.0, 6.0]);
        let z = standardize(&x);
        assert!(z.column(0).iter().all(|&v| v == 0.0));
        assert_abs_diff_eq!(z.column(1).sum(), 0.0, epsilon = 1e-12);
    }
}

//! Synthetic populations with a known selection mechanism, used as ground
//! truth for the bias decomposition.
//!
//! Three binary covariates define eight cells; a binary `U` depends on the
//! cell and shifts both selection and outcome. Randomness comes from
//! ChaCha8 streams keyed by `(replication, stage)` so replications can run
//! in parallel and still reproduce exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bias::{decompose, error_vector, ipw_error, Decomposition};
use crate::calibration::{oracle_ipw, weighted_mean};
use crate::data::{Column, Frame, Kind, SurveyFrame};
use crate::error::{Error, Result};

pub const N_COVARIATES: usize = 3;
pub const N_CELLS: usize = 1 << N_COVARIATES;
pub const COVARIATE_NAMES: [&str; N_COVARIATES] = ["x1", "x2", "x3"];
const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Population = 0,
    Sample = 1,
    Bootstrap = 2,
}

const STAGES: u64 = 4;

/// Generator for `(seed, replication, stage)`; each pair gets its own stream.
pub fn stream_rng(seed: u64, replication: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication * STAGES + stage as u64);
    rng
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDgp {
    pub population_size: usize,
    /// `P(x_k = 1)`, independent across k.
    pub p_x: [f64; N_COVARIATES],
    /// `logit P(U = 1 | x) = u_intercept + u_x . x`.
    pub u_intercept: f64,
    pub u_x: [f64; N_COVARIATES],
    /// `logit P(S = 1 | x, U) = theta0 + theta . x + eta U`.
    pub theta0: f64,
    pub theta: [f64; N_COVARIATES],
    pub eta: f64,
    /// `Y = beta0 + beta . x + u_loading U + noise_sd * N(0, 1)`.
    pub beta0: f64,
    pub beta: [f64; N_COVARIATES],
    pub u_loading: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticDgp {
    /// About 5% of the population is sampled; U raises both inclusion and outcome.
    fn default() -> Self {
        SyntheticDgp {
            population_size: 100_000,
            p_x: [0.5, 0.4, 0.3],
            u_intercept: -0.5,
            u_x: [1.0, -0.8, 0.6],
            theta0: -4.0,
            theta: [0.6, -0.5, 0.4],
            eta: 1.2,
            beta0: 1.0,
            beta: [1.0, -0.5, 0.8],
            u_loading: 2.0,
            noise_sd: 1.0,
            seed: 1,
        }
    }
}

/// Cell index from covariate bits (x1 is the lowest bit).
pub fn cell_of(x: [bool; N_COVARIATES]) -> usize {
    x.iter().enumerate().map(|(k, &b)| (b as usize) << k).sum()
}

pub fn cell_bits(cell: usize) -> [bool; N_COVARIATES] {
    std::array::from_fn(|k| cell >> k & 1 == 1)
}

impl SyntheticDgp {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 {
            return Err(Error::Config("population size must be positive".into()));
        }
        if self.p_x.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Config("covariate probabilities must lie in (0, 1)".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be non-negative".into()));
        }
        for cell in 0..N_CELLS {
            for u in [false, true] {
                let p = self.selection_prob(cell, u);
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Invalid(format!(
                        "selection probability {p} outside (0, 1) in cell {cell}, U = {}",
                        u as u8
                    )));
                }
            }
            let pu = self.p_u(cell);
            if !(pu > 0.0 && pu < 1.0) {
                return Err(Error::Invalid(format!("P(U = 1) = {pu} outside (0, 1) in cell {cell}")));
            }
        }
        Ok(())
    }

    fn dot(coef: &[f64; N_COVARIATES], cell: usize) -> f64 {
        cell_bits(cell)
            .iter()
            .zip(coef)
            .map(|(&b, c)| if b { *c } else { 0.0 })
            .sum()
    }

    pub fn p_cell(&self, cell: usize) -> f64 {
        cell_bits(cell)
            .iter()
            .zip(&self.p_x)
            .map(|(&b, p)| if b { *p } else { 1.0 - p })
            .product()
    }

    pub fn p_u(&self, cell: usize) -> f64 {
        logistic(self.u_intercept + Self::dot(&self.u_x, cell))
    }

    pub fn selection_prob(&self, cell: usize, u: bool) -> f64 {
        logistic(self.theta0 + Self::dot(&self.theta, cell) + if u { self.eta } else { 0.0 })
    }

    /// `P(S = 1 | x)`, marginalizing U.
    pub fn selection_prob_x(&self, cell: usize) -> f64 {
        let pu = self.p_u(cell);
        pu * self.selection_prob(cell, true) + (1.0 - pu) * self.selection_prob(cell, false)
    }

    pub fn mean_y(&self, cell: usize, u: bool) -> f64 {
        self.beta0 + Self::dot(&self.beta, cell) + if u { self.u_loading } else { 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub cell: Vec<usize>,
    pub u: Vec<bool>,
    pub y: Vec<f64>,
    /// True inclusion probability per unit.
    pub pi: Vec<f64>,
    pub mu: f64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn covariate(&self, k: usize) -> Vec<f64> {
        self.cell.iter().map(|&c| (c >> k & 1) as f64).collect()
    }

    /// Covariate columns, optionally with `y` and the oracle `u`.
    pub fn frame(&self, rows: Option<&[usize]>, with_y: bool, with_u: bool) -> Result<Frame> {
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..self.len()).collect();
                &all
            }
        };
        let mut cols: Vec<Column> = (0..N_COVARIATES)
            .map(|k| {
                Column::numeric(
                    COVARIATE_NAMES[k],
                    Kind::Binary,
                    rows.iter().map(|&i| (self.cell[i] >> k & 1) as f64).collect(),
                )
            })
            .collect();
        if with_u {
            cols.push(Column::numeric(
                "u",
                Kind::Binary,
                rows.iter().map(|&i| self.u[i] as u8 as f64).collect(),
            ));
        }
        if with_y {
            cols.push(Column::numeric(
                "y",
                Kind::Continuous,
                rows.iter().map(|&i| self.y[i]).collect(),
            ));
        }
        Frame::new(cols, None)
    }
}

pub fn generate(dgp: &SyntheticDgp, replication: u64) -> Result<Population> {
    dgp.validate()?;
    let mut rng = stream_rng(dgp.seed, replication, Stage::Population);
    let n = dgp.population_size;
    let mut pop = Population {
        cell: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        pi: Vec::with_capacity(n),
        mu: 0.0,
    };
    for _ in 0..n {
        let bits: [bool; N_COVARIATES] = std::array::from_fn(|k| rng.random::<f64>() < dgp.p_x[k]);
        let cell = cell_of(bits);
        let u = rng.random::<f64>() < dgp.p_u(cell);
        let noise: f64 = rng.sample(StandardNormal);
        pop.cell.push(cell);
        pop.u.push(u);
        pop.y.push(dgp.mean_y(cell, u) + dgp.noise_sd * noise);
        pop.pi.push(dgp.selection_prob(cell, u));
    }
    pop.mu = pop.y.iter().sum::<f64>() / n as f64;
    Ok(pop)
}

/// Independent Bernoulli inclusion; an empty draw is repeated (with a
/// warning) up to a fixed number of times.
pub fn draw_sample(pop: &Population, seed: u64, replication: u64) -> Result<Vec<usize>> {
    let mut rng = stream_rng(seed, replication, Stage::Sample);
    for attempt in 0..MAX_REDRAWS {
        let idx: Vec<usize> = (0..pop.len()).filter(|&i| rng.random::<f64>() < pop.pi[i]).collect();
        if !idx.is_empty() {
            return Ok(idx);
        }
        log::warn!("empty sample on draw {}; redrawing", attempt + 1);
    }
    Err(Error::Invalid(format!("sample empty after {MAX_REDRAWS} draws")))
}

pub fn sample_frame(pop: &Population, idx: &[usize]) -> Result<SurveyFrame> {
    SurveyFrame::new(pop.frame(Some(idx), true, false)?, "y")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDecomposition {
    /// Normalized `1 / pi` for sampled units.
    pub w_star: Vec<f64>,
    /// Within-cell sample mean of `w_star`.
    pub w: Vec<f64>,
    /// Normalized `1 / P(S = 1 | x)` from the generating model.
    pub w_marginal: Vec<f64>,
    pub eps: Vec<f64>,
    /// The same error from the conditional-probability form.
    pub eps_conditional: Vec<f64>,
    pub decomposition: Decomposition,
    pub mu_hat: f64,
    pub mu_hat_oracle: f64,
    pub mu_hat_marginal: f64,
    pub mu: f64,
}

pub fn oracle_decomposition(dgp: &SyntheticDgp, pop: &Population, idx: &[usize]) -> Result<OracleDecomposition> {
    if idx.is_empty() {
        return Err(Error::Invalid("empty sample".into()));
    }
    let pi: Vec<f64> = idx.iter().map(|&i| pop.pi[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| pop.y[i]).collect();
    let cells: Vec<usize> = idx.iter().map(|&i| pop.cell[i]).collect();
    let us: Vec<bool> = idx.iter().map(|&i| pop.u[i]).collect();
    let w_star = oracle_ipw(&pi)?.w;

    let mut sum = [0.0; N_CELLS];
    let mut count = [0.0; N_CELLS];
    let mut sum_u = [0.0; N_CELLS];
    let mut count_u = [0.0; N_CELLS];
    for (k, &c) in cells.iter().enumerate() {
        sum[c] += w_star[k];
        count[c] += 1.0;
        if us[k] {
            sum_u[c] += w_star[k];
            count_u[c] += 1.0;
        }
    }
    let mut pop_has = [false; N_CELLS];
    pop.cell.iter().for_each(|&c| pop_has[c] = true);
    if let Some(c) = (0..N_CELLS).find(|&c| pop_has[c] && count[c] == 0.0) {
        return Err(Error::Invalid(format!("cell {c} has no sampled units")));
    }
    let w: Vec<f64> = cells.iter().map(|&c| sum[c] / count[c]).collect();
    let w_marginal = oracle_ipw(&cells.iter().map(|&c| dgp.selection_prob_x(c)).collect::<Vec<_>>())?.w;
    let eps = error_vector(&w, &w_star)?;
    // P(U | x) from inverse-probability shares, P(U | x, S = 1) from counts
    let eps_conditional = cells
        .iter()
        .zip(&us)
        .zip(&w)
        .map(|((&c, &u), &wi)| {
            let (pop_share, smp_share) = if u {
                (sum_u[c] / sum[c], count_u[c] / count[c])
            } else {
                ((sum[c] - sum_u[c]) / sum[c], (count[c] - count_u[c]) / count[c])
            };
            ipw_error(wi, pop_share, smp_share)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleDecomposition {
        decomposition: decompose(&w, &w_star, &y)?,
        mu_hat: weighted_mean(&w, &y)?,
        mu_hat_oracle: weighted_mean(&w_star, &y)?,
        mu_hat_marginal: weighted_mean(&w_marginal, &y)?,
        mu: pop.mu,
        w_star,
        w,
        w_marginal,
        eps,
        eps_conditional,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactMoments {
    /// Superpopulation mean of Y.
    pub mu: f64,
    /// Large-sample limit of the estimator weighting by `1 / P(S | x)`.
    pub mu_hat_limit: f64,
    pub bias: f64,
    /// Expected sampling fraction.
    pub sampling_fraction: f64,
}

/// Enumerates the 16 `(x, U)` cells.
pub fn exact_moments(dgp: &SyntheticDgp) -> Result<ExactMoments> {
    dgp.validate()?;
    let mut mu = 0.0;
    let mut limit = 0.0;
    let mut frac = 0.0;
    for c in 0..N_CELLS {
        let (px, pu) = (dgp.p_cell(c), dgp.p_u(c));
        let (s1, s0) = (dgp.selection_prob(c, true), dgp.selection_prob(c, false));
        let (y1, y0) = (dgp.mean_y(c, true), dgp.mean_y(c, false));
        mu += px * (pu * y1 + (1.0 - pu) * y0);
        let sx = pu * s1 + (1.0 - pu) * s0;
        limit += px * (pu * s1 * y1 + (1.0 - pu) * s0 * y0) / sx;
        frac += px * sx;
    }
    Ok(ExactMoments {
        mu,
        mu_hat_limit: limit,
        bias: limit - mu,
        sampling_fraction: frac,
    })
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use svysens::benchmark::{benchmark, loo_error, loo_weights, mrcs, scaled_params};
use svysens::bias::{bias, ObservedScale, SensitivityParams};
use svysens::bootstrap::{bootstrap_interval, BootstrapConfig};
use svysens::calibration::{solve_raking, CalibrationProblem};
use svysens::data::{Column, Frame, Kind};
use svysens::detection::{detect, solve_separating_set, DetectConfig, PathMatrix, Status};
use svysens::features::{build_features, FeatureMap, TargetSpec};
use svysens::partial::{binary_grid, partial_ipw_error, partial_sweep};
use svysens::simulation::{draw_sample, generate, oracle_decomposition, sample_frame, SyntheticDgp};
use svysens::summary::{robustness_value, RobustnessInput};
use svysens::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn pvar(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

fn pcov(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let s = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, s)
}

fn rv_closure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mu_hat: f64 = rng.random_range(-10.0..10.0);
        let b_star = loop {
            let b: f64 = rng.random_range(-10.0..10.0);
            if b.abs() >= 0.1 && (b - mu_hat).abs() > 1e-3 {
                break b;
            }
        };
        let var_y: f64 = rng.random_range(0.01..10.0);
        let var_w: f64 = rng.random_range(0.01..5.0);
        let rv = robustness_value(&RobustnessInput {
            mu_hat,
            b_star,
            var_y,
            var_w,
        })
        .unwrap()
        .rv;
        let rho = (mu_hat - b_star).signum() * rv.sqrt();
        let params = SensitivityParams::new(rho, rv).unwrap();
        let scale = ObservedScale::new(var_y, var_w, mu_hat).unwrap();
        let adjusted = mu_hat - bias(&params, &scale).unwrap();
        worst = worst.max((adjusted - b_star).abs() / b_star.abs());
    }
    outcome(worst <= 1e-10, format!("max relative error {worst:.2e}"))
}

fn mrcs_arithmetic() -> Outcome {
    let mi = mrcs(4.57, 0.0, -1.87).0;
    let nc = mrcs(-0.37, 0.0, -1.17).0;
    let mi_ok = (mi * 100.0).round() / 100.0 == -2.44;
    let nc_ok = (nc - 0.31).abs() <= 0.01;
    outcome(mi_ok && nc_ok, format!("case A {mi:.4}, case B {nc:.4}"))
}

fn variance_decomposition_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let dgp = SyntheticDgp {
            seed,
            ..SyntheticDgp::default()
        };
        let pop = generate(&dgp, 0).unwrap();
        let idx = draw_sample(&pop, seed, 0).unwrap();
        let o = oracle_decomposition(&dgp, &pop, &idx).unwrap();
        let gap = pvar(&o.w_star) - pvar(&o.w) - pvar(&o.eps);
        worst = worst.max(gap.abs());
    }
    outcome(
        worst <= 1e-10,
        format!("max |var(w*) - var(w) - var(eps)| = {worst:.2e} over 100 seeds"),
    )
}

fn bias_monte_carlo() -> Outcome {
    let dgp = SyntheticDgp {
        seed: 4,
        ..SyntheticDgp::default()
    };
    let reps: Vec<(f64, f64, f64, usize)> = (0..1000u64)
        .into_par_iter()
        .map(|r| {
            let pop = generate(&dgp, r).unwrap();
            let idx = draw_sample(&pop, dgp.seed, r).unwrap();
            let o = oracle_decomposition(&dgp, &pop, &idx).unwrap();
            let y: Vec<f64> = idx.iter().map(|&i| pop.y[i]).collect();
            let cov_eps_y = pcov(&o.eps, &y);
            let scale = ObservedScale::from_sample(&o.w, &y).unwrap();
            let closed_form = bias(&o.decomposition.params(), &scale).unwrap();
            (o.mu_hat - pop.mu, cov_eps_y, closed_form, idx.len())
        })
        .collect();
    let err: Vec<f64> = reps.iter().map(|r| r.0).collect();
    let d_cov: Vec<f64> = reps.iter().map(|r| r.0 - r.1).collect();
    let d_closed: Vec<f64> = reps.iter().map(|r| r.0 - r.2).collect();
    let n_mean = reps.iter().map(|r| r.3 as f64).sum::<f64>() / reps.len() as f64;
    let root = (reps.len() as f64).sqrt();
    let (m_err, _) = mean_sd(&err);
    let (m_cov, s_cov) = mean_sd(&d_cov);
    let (m_closed, s_closed) = mean_sd(&d_closed);
    let (se_cov, se_closed) = (s_cov / root, s_closed / root);
    let pass = m_cov.abs() <= 3.0 * se_cov && m_closed.abs() <= 3.0 * se_closed;
    outcome(
        pass,
        format!(
            "mean sample {n_mean:.0}; mean bias {m_err:.4}; bias - cov {m_cov:.5} (MC SE {se_cov:.5}); bias - closed form {m_closed:.5} (MC SE {se_closed:.5})"
        ),
    )
}

fn calibration_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let n = 2000;
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..100 {
        let p = rng.random_range(1..=30usize);
        let x = DMatrix::from_fn(n, p, |_, j| {
            if j % 2 == 0 {
                (rng.random::<f64>() < 0.2 + 0.6 * (j as f64 / 30.0)) as u8 as f64
            } else {
                rng.sample::<f64, _>(StandardNormal) * (1.0 + j as f64 / 10.0)
            }
        });
        let tilt: Vec<f64> = (0..n)
            .map(|_| (0.5 * rng.sample::<f64, _>(StandardNormal)).exp())
            .collect();
        let total: f64 = tilt.iter().sum();
        let targets: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|i| tilt[i] * x[(i, j)]).sum::<f64>() / total)
            .collect();
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let problem = CalibrationProblem::from_matrix(x.clone(), targets.clone(), base).unwrap();
        let w = match solve_raking(&problem) {
            Ok(w) if w.diagnostics.converged => w.w,
            _ => {
                failures += 1;
                continue;
            }
        };
        for j in 0..p {
            let achieved = (0..n).map(|i| w[i] * x[(i, j)]).sum::<f64>() / n as f64;
            worst = worst.max((achieved - targets[j]).abs());
        }
    }

    // infeasible: a binary margin outside [0, 1]
    let x = DMatrix::from_fn(n, 3, |i, j| ((i * (j + 3)) % 5 == 0) as u8 as f64);
    let problem = CalibrationProblem::from_matrix(x, vec![0.2, 1.2, 0.2], vec![1.0; n]).unwrap();
    let named = matches!(solve_raking(&problem), Err(Error::Infeasible { ref constraint, .. }) if constraint == "c1");

    outcome(
        failures == 0 && worst <= 1e-8 && named,
        format!("max margin error {worst:.2e}, unsolved {failures}/100, infeasible named: {named}"),
    )
}

fn simulated_problem(seed: u64) -> (CalibrationProblem, Vec<f64>, Frame) {
    let dgp = SyntheticDgp {
        seed,
        ..SyntheticDgp::default()
    };
    let pop = generate(&dgp, 0).unwrap();
    let idx = draw_sample(&pop, seed, 0).unwrap();
    let survey = sample_frame(&pop, &idx).unwrap();
    let target = TargetSpec::Population(pop.frame(None, false, false).unwrap());
    let vars: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
    let map = FeatureMap::main_effects(survey.frame(), &vars).unwrap();
    let features = build_features(survey.frame(), &target, &map).unwrap();
    let problem = CalibrationProblem::new(&features, survey.base_weights()).unwrap();
    let frame = pop.frame(Some(&idx), true, true).unwrap();
    (problem, survey.outcome().to_vec(), frame)
}

fn benchmarking_identities() -> Outcome {
    let (problem, y, _) = simulated_problem(6);
    let w = solve_raking(&problem).unwrap().ensure_converged().unwrap();
    let mut exact = true;
    let mut bitwise = true;
    for var in ["x1", "x2", "x3"] {
        let loo = loo_weights(&problem, &[var.to_string()]).unwrap();
        let eps = loo_error(&w.w, &loo.w);
        exact &= loo.w.iter().zip(&eps).zip(&w.w).all(|((a, e), b)| a - e == *b);
        let rec = benchmark(var, &w.w, &loo.w, &y, 0.0).unwrap();
        let p = scaled_params(1.0, 1.0, rec.r2_loo, rec.rho_hat).unwrap();
        bitwise &= p.r2.to_bits() == rec.r2_hat.to_bits() && p.rho.to_bits() == rec.rho_hat.to_bits();
    }
    let zero = scaled_params(1.0, 1.0, 0.0, 0.3).unwrap().r2 == 0.0;
    let half = scaled_params(1.0, 1.0, 1.0, 0.3).unwrap().r2 == 0.5;
    outcome(
        exact && bitwise && zero && half,
        format!("reconstruction exact: {exact}; 0->0: {zero}; 1->0.5: {half}; scaled_params(1,1) bitwise: {bitwise}"),
    )
}

/// Two strata of X, binary V, known cell masses, selection probabilities
/// and outcomes. Returns (brute-force bias, covariance form of the bias).
fn two_stratum() -> (f64, f64) {
    // (x, v, P(x, v), P(S = 1 | x, v), Y)
    let cells = [
        (0usize, 0.0, 0.35, 0.1, 1.0),
        (0, 1.0, 0.15, 0.35, 4.0),
        (1, 0.0, 0.30, 0.2, 2.0),
        (1, 1.0, 0.20, 0.075, 9.0),
    ];
    let sampled = [70usize, 105, 120, 30];
    let mu: f64 = cells.iter().map(|c| c.2 * c.4).sum();
    let p_x = |x: usize| cells.iter().filter(|c| c.0 == x).map(|c| c.2).sum::<f64>();
    let sel_x = |x: usize| cells.iter().filter(|c| c.0 == x).map(|c| c.2 * c.3).sum::<f64>();
    let limit: f64 = (0..2)
        .map(|x| p_x(x) * cells.iter().filter(|c| c.0 == x).map(|c| c.2 * c.3 * c.4).sum::<f64>() / sel_x(x))
        .sum();
    let p_s: f64 = (0..2).map(sel_x).sum();
    let p_v1 = |x: usize| cells.iter().find(|c| c.0 == x && c.1 == 1.0).unwrap().2 / p_x(x);

    let (mut w, mut v, mut s, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (c, &k) in cells.iter().zip(&sampled) {
        for _ in 0..k {
            w.push(p_s / (sel_x(c.0) / p_x(c.0)));
            v.push(c.1);
            s.push(c.0);
            y.push(c.4);
        }
    }
    let eps = partial_ipw_error(&w, &v, &s, &[p_v1(0), p_v1(1)]).unwrap();
    (limit - mu, pcov(&eps, &y))
}

fn partial_anchoring() -> Outcome {
    let (problem, y, frame) = simulated_problem(7);
    let reduced = problem.without_sources(&["x3".to_string()]);
    let v = frame.column("x3").unwrap().as_numeric().unwrap().to_vec();
    let sweep = partial_sweep(&reduced, "x3", &v, &y, &binary_grid(&v)).unwrap();
    let anchor = sweep
        .points
        .iter()
        .find(|p| p.t_v == sweep.baseline_mean_v)
        .and_then(|p| p.estimate)
        .map(|e| (e - sweep.baseline_estimate).abs());
    let (truth, via_eps) = two_stratum();
    let oracle_gap = (truth - via_eps).abs();
    let pass = anchor.is_some_and(|a| a <= 1e-8) && oracle_gap <= 1e-10 && truth.abs() > 0.1;
    outcome(
        pass,
        format!("anchor gap {anchor:?}; two-stratum bias {truth:.6} vs {via_eps:.6} (gap {oracle_gap:.1e})"),
    )
}

fn detection_frame(rng: &mut ChaCha8Rng, cycle: bool) -> Frame {
    let n = 2000;
    let mut cols: Vec<(&str, Kind, Vec<f64>)> = vec![
        ("y", Kind::Continuous, Vec::with_capacity(n)),
        ("v", Kind::Binary, Vec::with_capacity(n)),
        ("w1", Kind::Continuous, Vec::with_capacity(n)),
        ("w2", Kind::Continuous, Vec::with_capacity(n)),
        ("z", Kind::Continuous, Vec::with_capacity(n)),
    ];
    let mut e = || rng.sample::<f64, _>(StandardNormal);
    for _ in 0..n {
        let v = (e() > 0.0) as u8 as f64;
        let w1 = 1.5 * v + e();
        let (w2, y) = if cycle {
            let w2 = 1.5 * v + e();
            (w2, w1 - w2 + e())
        } else {
            (e(), 1.5 * w1 + e())
        };
        let z = e();
        for (c, val) in cols.iter_mut().zip([y, v, w1, w2, z]) {
            c.2.push(val);
        }
    }
    Frame::new(
        cols.into_iter().map(|(n, k, v)| Column::numeric(n, k, v)).collect(),
        None,
    )
    .unwrap()
}

fn brute_force_cover(q: usize, rows: &[Vec<usize>]) -> Option<usize> {
    (0u32..1 << q)
        .filter(|m| rows.iter().all(|r| r.iter().any(|&c| m >> c & 1 == 1)))
        .map(|m| m.count_ones() as usize)
        .min()
}

fn detection_recovery() -> Outcome {
    let covs: Vec<String> = ["w1", "w2", "z"].iter().map(|s| s.to_string()).collect();
    let sampling = vec!["v".to_string()];
    let run = |cycle: bool, expected: &[&str]| -> usize {
        (0..100u64)
            .into_par_iter()
            .filter(|&r| {
                let mut rng = ChaCha8Rng::seed_from_u64(8000 + r + if cycle { 1000 } else { 0 });
                let frame = detection_frame(&mut rng, cycle);
                let cfg = DetectConfig::default();
                let rep = detect(&frame, "y", &covs, &sampling, &sampling, &cfg);
                rep.is_ok_and(|d| d.result.status == Status::Found && d.result.set == expected)
            })
            .count()
    };
    let chain = run(false, &["w1"]);
    let cycle = run(true, &["w1", "w2"]);

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut agree = 0;
    for _ in 0..200 {
        let q = rng.random_range(1..=16usize);
        let n_rows = rng.random_range(1..=24usize);
        let rows: Vec<Vec<usize>> = (0..n_rows)
            .map(|_| {
                let mut r: Vec<usize> = (0..q).filter(|_| rng.random::<f64>() < 0.25).collect();
                if r.is_empty() {
                    r.push(rng.random_range(0..q));
                }
                r
            })
            .collect();
        let names = (0..q).map(|c| format!("n{c}")).collect();
        let pm = PathMatrix::from_rows(names, rows.clone());
        let got = solve_separating_set(&pm, &vec![false; q])
            .ok()
            .filter(|r| r.status.is_found());
        if got.map(|r| r.objective) == brute_force_cover(q, &rows) {
            agree += 1;
        }
    }
    outcome(
        chain >= 95 && cycle >= 95 && agree == 200,
        format!("chain {chain}/100, cycle {cycle}/100, cover vs exhaustive {agree}/200"),
    )
}

fn bootstrap_coverage() -> Outcome {
    const SEED: u64 = 9090;
    let dgp = SyntheticDgp {
        population_size: 20_000,
        eta: 0.0,
        seed: SEED,
        ..SyntheticDgp::default()
    };
    let vars: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
    let covered: Vec<bool> = (0..100u64)
        .map(|r| {
            let pop = generate(&dgp, r).unwrap();
            let idx = draw_sample(&pop, SEED, r).unwrap();
            let survey = sample_frame(&pop, &idx).unwrap();
            let target = TargetSpec::Population(pop.frame(None, false, false).unwrap());
            let map = FeatureMap::main_effects(survey.frame(), &vars).unwrap();
            let features = build_features(survey.frame(), &target, &map).unwrap();
            let problem = CalibrationProblem::new(&features, survey.base_weights()).unwrap();
            let ci = bootstrap_interval(
                &problem,
                survey.outcome(),
                &SensitivityParams::new(0.0, 0.0).unwrap(),
                &BootstrapConfig {
                    replicates: 500,
                    alpha: 0.05,
                    seed: SEED + r,
                    ..BootstrapConfig::default()
                },
            )
            .unwrap();
            ci.lower <= pop.mu && pop.mu <= ci.upper
        })
        .collect();
    let hits = covered.iter().filter(|c| **c).count();
    outcome(hits >= 93, format!("{hits}/100 intervals cover the population mean"))
}

fn run_cli(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_svysens"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SVYSENS_OUT")
        .env_remove("SVYSENS_THREADS")
        .status()
        .is_ok_and(|s| s.success())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    if !run_cli(&["simulate", "--out", "data", "--seed", "10"], root) {
        return outcome(false, "simulate failed");
    }
    for out in ["run1", "run2"] {
        for cmd in ["weight", "summary", "contour"] {
            if !run_cli(
                &[cmd, "--config", "data/config.toml", "--out", out, "--seed", "10"],
                root,
            ) {
                return outcome(false, format!("{cmd} failed"));
            }
        }
    }
    let files = [
        "weight.report.json",
        "summary.report.json",
        "contour.report.json",
        "weights.csv",
        "contour.csv",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(root.join("run1").join(f)).ok() != std::fs::read(root.join("run2").join(f)).ok())
        .collect();
    outcome(differing.is_empty(), format!("differing files: {differing:?}"))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 robustness value closure", Duration::from_secs(1), rv_closure),
        ("2 MRCS reference values", Duration::from_secs(1), mrcs_arithmetic),
        (
            "3 variance decomposition exactness",
            Duration::from_secs(10),
            variance_decomposition_exactness,
        ),
        ("4 bias Monte Carlo", Duration::from_secs(300), bias_monte_carlo),
        (
            "5 calibration correctness",
            Duration::from_secs(30),
            calibration_correctness,
        ),
        (
            "6 benchmarking identities",
            Duration::from_secs(10),
            benchmarking_identities,
        ),
        ("7 partial sweep anchoring", Duration::from_secs(30), partial_anchoring),
        ("8 detection recovery", Duration::from_secs(300), detection_recovery),
        ("9 bootstrap coverage", Duration::from_secs(600), bootstrap_coverage),
        ("10 determinism", Duration::from_secs(60), determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed < budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} [{:.2}s, budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

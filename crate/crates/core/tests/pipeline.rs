use svysens::benchmark::benchmark_all;
use svysens::bias::ObservedScale;
use svysens::calibration::{solve_raking, weighted_mean, CalibrationProblem};
use svysens::features::{build_features, FeatureMap, TargetSpec};
use svysens::simulation::{draw_sample, exact_moments, generate, oracle_decomposition, sample_frame, SyntheticDgp};
use svysens::summary::{contour_grid, robustness_value, Resolution, RobustnessInput};

fn vars() -> Vec<String> {
    ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect()
}

fn raked(seed: u64) -> (CalibrationProblem, Vec<f64>, Vec<f64>, f64) {
    let dgp = SyntheticDgp {
        seed,
        ..SyntheticDgp::default()
    };
    let pop = generate(&dgp, 0).unwrap();
    let idx = draw_sample(&pop, seed, 0).unwrap();
    let survey = sample_frame(&pop, &idx).unwrap();
    let target = TargetSpec::Population(pop.frame(None, false, false).unwrap());
    let map = FeatureMap::main_effects(survey.frame(), &vars()).unwrap();
    let features = build_features(survey.frame(), &target, &map).unwrap();
    let problem = CalibrationProblem::new(&features, survey.base_weights()).unwrap();
    let w = solve_raking(&problem).unwrap().ensure_converged().unwrap().w;
    (problem, w, survey.outcome().to_vec(), pop.mu)
}

#[test]
fn rv_sits_on_the_killer_boundary() {
    let (_, w, y, _) = raked(31);
    let mu_hat = weighted_mean(&w, &y).unwrap();
    let scale = ObservedScale::from_sample(&w, &y).unwrap();
    let b_star = mu_hat - 0.5;
    let rob = robustness_value(&RobustnessInput {
        mu_hat,
        b_star,
        var_y: scale.var_y,
        var_w: scale.var_w,
    })
    .unwrap();
    let rv = rob.rv;
    let bias = rv.sqrt() * (scale.var_y * scale.var_w * rv / (1.0 - rv)).sqrt();
    assert!((mu_hat - bias - b_star).abs() < 1e-10);

    let grid = contour_grid(&scale, b_star, Resolution::default()).unwrap();
    assert_eq!(grid.rho_axis.len(), 201);
    assert_eq!(grid.r2_axis.len(), 191);
    for (i, &r2) in grid.r2_axis.iter().enumerate() {
        for (j, &rho) in grid.rho_axis.iter().enumerate() {
            let b = rho * (scale.var_y * scale.var_w * r2 / (1.0 - r2)).sqrt();
            assert!((grid.bias[i][j] - b).abs() <= 1e-12 * b.abs().max(1.0));
            let adjusted = mu_hat - b;
            let killer = adjusted <= b_star;
            if (adjusted - b_star).abs() > 1e-12 {
                assert_eq!(grid.killer[i][j], killer, "rho {rho}, r2 {r2}");
            }
        }
    }
    // nodes with both coordinates above RV flip the estimate
    let j = grid.rho_axis.iter().position(|&r| r > rv.sqrt() + 0.02).unwrap();
    let i = grid.r2_axis.iter().position(|&r| r > rv + 0.02).unwrap();
    assert!(grid.killer[i][j]);
    assert!(!grid.killer[0][j]);
}

#[test]
fn benchmarks_use_the_observed_scale() {
    let (problem, w, y, _) = raked(32);
    let wv = solve_raking(&problem).unwrap();
    let scale = ObservedScale::from_sample(&w, &y).unwrap();
    let recs = benchmark_all(&problem, &wv, &y, &vars(), 0.0).unwrap();
    assert_eq!(
        recs.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(),
        ["x1", "x2", "x3"]
    );
    for r in &recs {
        assert!((r.r2_hat - r.r2_loo / (1.0 + r.r2_loo)).abs() < 1e-15);
        let b = r.rho_hat * (scale.var_y * scale.var_w * r.r2_hat / (1.0 - r.r2_hat)).sqrt();
        assert!((r.est_bias - b).abs() <= 1e-10 * b.abs().max(1.0), "{}", r.label);
    }
}

#[test]
fn eta_controls_the_confounding_bias() {
    let dgp = SyntheticDgp {
        eta: 0.0,
        seed: 33,
        ..SyntheticDgp::default()
    };
    let exact = exact_moments(&dgp).unwrap();
    assert!(exact.bias.abs() < 1e-12);

    let confounded = SyntheticDgp {
        seed: 33,
        ..SyntheticDgp::default()
    };
    let exact = exact_moments(&confounded).unwrap();
    assert!(exact.bias > 0.1);
}

#[test]
fn simulated_moments_match_closed_form() {
    let dgp = SyntheticDgp {
        seed: 34,
        ..SyntheticDgp::default()
    };
    let exact = exact_moments(&dgp).unwrap();
    let reps = 60;
    let mut mu = Vec::new();
    let mut limit = Vec::new();
    let mut frac = Vec::new();
    for r in 0..reps {
        let pop = generate(&dgp, r).unwrap();
        let idx = draw_sample(&pop, dgp.seed, r).unwrap();
        let o = oracle_decomposition(&dgp, &pop, &idx).unwrap();
        mu.push(pop.mu);
        limit.push(o.mu_hat);
        frac.push(idx.len() as f64 / pop.len() as f64);
    }
    let check = |x: &[f64], target: f64, what: &str| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(
            (m - target).abs() <= 4.0 * sd / n.sqrt() + 1e-12,
            "{what}: {m} vs {target}"
        );
    };
    check(&mu, exact.mu, "population mean");
    check(&limit, exact.mu_hat_limit, "estimator limit");
    check(&frac, exact.sampling_fraction, "sampling fraction");
}

//! Robustness value and bias contour grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{bias, ObservedScale, SensitivityParams};
use crate::error::{Error, Result};
use crate::stats::sign;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessInput {
    pub mu_hat: f64,
    pub b_star: f64,
    pub var_y: f64,
    pub var_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Robustness {
    /// `a = (mu_hat - b*)^2 / (var_y var_w)`.
    pub a: f64,
    pub rv: f64,
}

/// Common value of `rho^2` and `R^2` at which the bias moves the estimate to `b*`.
pub fn robustness_value(input: &RobustnessInput) -> Result<Robustness> {
    if !input.b_star.is_finite() || !input.mu_hat.is_finite() {
        return Err(Error::Invalid("mu_hat and b* must be finite".into()));
    }
    let gap = input.mu_hat - input.b_star;
    if gap == 0.0 {
        return Ok(Robustness { a: 0.0, rv: 0.0 });
    }
    let s = input.var_y * input.var_w;
    if !(s > 0.0) {
        return Err(Error::Invalid(
            "var_S(Y) * var_S(w) must be positive when mu_hat != b*".into(),
        ));
    }
    let a = gap * gap / s;
    // (sqrt(a^2 + 4a) - a) / 2, rationalized to avoid cancellation for large a
    let rv = 2.0 * a / ((a * a + 4.0 * a).sqrt() + a);
    Ok(Robustness { a, rv })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPoint {
    pub label: String,
    pub rho: f64,
    pub r2: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub rho: usize,
    pub r2: usize,
    pub r2_max: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        // rho step 0.01 over [-1, 1]; R^2 step 0.005 over [0, 0.95]
        Resolution {
            rho: 201,
            r2: 191,
            r2_max: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid {
    pub mu_hat: f64,
    pub b_star: f64,
    pub rho_axis: Vec<f64>,
    pub r2_axis: Vec<f64>,
    /// `bias[i][j]` at `(rho_axis[j], r2_axis[i])`.
    pub bias: Vec<Vec<f64>>,
    pub killer: Vec<Vec<bool>>,
    /// Analytic killer boundary `(rho, R^2)` for each rho whose boundary R^2 is on the grid.
    pub boundary: Vec<(f64, f64)>,
    pub benchmark_points: Vec<BenchmarkPoint>,
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Whether the adjusted estimate reaches or crosses `b*`.
pub fn is_killer(mu_hat: f64, b_star: f64, bias: f64) -> bool {
    let adjusted = mu_hat - bias;
    adjusted == b_star || sign(mu_hat - b_star) != sign(adjusted - b_star)
}

/// Boundary `R^2(rho) = c / (1 + c)` with `c = (mu_hat - b*)^2 / (rho^2 var_y var_w)`.
/// `None` when `rho` points away from `b*` (no bias in that direction reaches it).
pub fn boundary_r2(scale: &ObservedScale, b_star: f64, rho: f64) -> Option<f64> {
    let gap = scale.mu_hat - b_star;
    if rho == 0.0 {
        return (gap == 0.0).then_some(0.0);
    }
    if gap != 0.0 && sign(rho) != sign(gap) {
        return None;
    }
    let c = gap * gap / (rho * rho * scale.var_y * scale.var_w);
    Some(c / (1.0 + c))
}

pub fn contour_grid(scale: &ObservedScale, b_star: f64, res: Resolution) -> Result<ContourGrid> {
    if res.rho < 2 || res.r2 < 2 {
        return Err(Error::Invalid("grid resolution must be at least 2 per axis".into()));
    }
    if !(res.r2_max > 0.0 && res.r2_max < 1.0) {
        return Err(Error::Invalid("r2_max must lie in (0, 1)".into()));
    }
    let rho_axis = axis(-1.0, 1.0, res.rho);
    let r2_axis = axis(0.0, res.r2_max, res.r2);
    let rows: Vec<(Vec<f64>, Vec<bool>)> = r2_axis
        .par_iter()
        .map(|&r2| {
            let b: Vec<f64> = rho_axis
                .iter()
                .map(|&rho| {
                    let p = SensitivityParams {
                        rho,
                        r2,
                        var_w_star: None,
                    };
                    bias(&p, scale).expect("grid parameters are in range")
                })
                .collect();
            let k = b.iter().map(|&x| is_killer(scale.mu_hat, b_star, x)).collect();
            (b, k)
        })
        .collect();
    let (bias_values, killer) = rows.into_iter().unzip();
    let boundary = rho_axis
        .iter()
        .filter_map(|&rho| {
            boundary_r2(scale, b_star, rho)
                .filter(|r2| *r2 <= res.r2_max)
                .map(|r2| (rho, r2))
        })
        .collect();
    Ok(ContourGrid {
        mu_hat: scale.mu_hat,
        b_star,
        rho_axis,
        r2_axis,
        bias: bias_values,
        killer,
        boundary,
        benchmark_points: Vec::new(),
    })
}

/// Fraction of grid nodes inside the killer region.
pub fn killer_region_area(grid: &ContourGrid) -> f64 {
    let total: usize = grid.killer.iter().map(Vec::len).sum();
    let hits: usize = grid.killer.iter().map(|r| r.iter().filter(|&&k| k).count()).sum();
    hits as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rv(mu: f64, b: f64, vy: f64, vw: f64) -> f64 {
        robustness_value(&RobustnessInput {
            mu_hat: mu,
            b_star: b,
            var_y: vy,
            var_w: vw,
        })
        .unwrap()
        .rv
    }

    #[test]
    fn rv_examples() {
        assert_eq!(rv(3.0, 3.0, 1.0, 1.0), 0.0);
        // a = 1
        assert_abs_diff_eq!(rv(2.0, 1.0, 1.0, 1.0), (5f64.sqrt() - 1.0) / 2.0, epsilon = 1e-15);
        assert!(robustness_value(&RobustnessInput {
            mu_hat: 1.0,
            b_star: 0.0,
            var_y: 0.0,
            var_w: 1.0
        })
        .is_err());
    }

    #[test]
    fn reported_rv_magnitudes_are_consistent() {
        // RV = 0.11 at mu = 4.57 implies a = RV^2/(1-RV); re-deriving RV from it round-trips
        let a = 0.11f64.powi(2) / 0.89;
        let s = 4.57f64.powi(2) / a;
        assert_abs_diff_eq!(rv(4.57, 0.0, s, 1.0), 0.11, epsilon = 1e-12);
    }

    #[test]
    fn rho_zero_row_is_zero() {
        let s = ObservedScale::new(2.0, 0.5, 1.0).unwrap();
        let g = contour_grid(&s, 0.0, Resolution::default()).unwrap();
        let j = g.rho_axis.iter().position(|r| r.abs() < 1e-12).unwrap();
        assert!(g.bias.iter().all(|row| row[j] == 0.0));
        assert_eq!(g.bias.len(), 191);
        assert_eq!(g.bias[0].len(), 201);
    }

    #[test]
    fn rv_point_is_on_boundary() {
        let s = ObservedScale::new(2.0, 0.5, 1.0).unwrap();
        let r = rv(1.0, 0.0, 2.0, 0.5);
        let on = boundary_r2(&s, 0.0, r.sqrt()).unwrap();
        assert_abs_diff_eq!(on, r, epsilon = 1e-12);
    }

    #[test]
    fn boundary_at_rho_one() {
        let s = ObservedScale::new(3.0, 0.4, 2.0).unwrap();
        let a = 4.0 / 1.2;
        assert_abs_diff_eq!(boundary_r2(&s, 0.0, 1.0).unwrap(), a / (1.0 + a), epsilon = 1e-15);
        assert!(boundary_r2(&s, 0.0, -1.0).is_none());
    }

    #[test]
    fn killer_area_limits() {
        let near = ObservedScale::new(1.0, 1.0, 0.0).unwrap();
        let g = contour_grid(&near, 0.0, Resolution::default()).unwrap();
        assert_eq!(killer_region_area(&g), 1.0);

        let far = ObservedScale::new(1e-4, 1e-4, 10.0).unwrap();
        let g = contour_grid(&far, 0.0, Resolution::default()).unwrap();
        assert_eq!(killer_region_area(&g), 0.0);
    }

    #[test]
    fn killer_area_shrinks_with_distance() {
        let res = Resolution {
            rho: 41,
            r2: 39,
            r2_max: 0.95,
        };
        let a1 = killer_region_area(&contour_grid(&ObservedScale::new(1.0, 1.0, 0.5).unwrap(), 0.0, res).unwrap());
        let a2 = killer_region_area(&contour_grid(&ObservedScale::new(1.0, 1.0, 1.5).unwrap(), 0.0, res).unwrap());
        assert!(a2 <= a1);
        assert!(a1 > 0.0 && a1 < 1.0);
    }

    #[test]
    fn killer_nodes_reach_threshold() {
        for mu in [1.3, -0.8] {
            let s = ObservedScale::new(1.5, 0.8, mu).unwrap();
            let g = contour_grid(
                &s,
                0.0,
                Resolution {
                    rho: 51,
                    r2: 40,
                    r2_max: 0.95,
                },
            )
            .unwrap();
            for (i, row) in g.killer.iter().enumerate() {
                for (j, &k) in row.iter().enumerate() {
                    if k {
                        let b = g.bias[i][j];
                        if mu > 0.0 {
                            assert!(g.rho_axis[j] > 0.0 && b >= mu);
                        } else {
                            assert!(g.rho_axis[j] < 0.0 && b <= mu);
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn rv_symmetric_and_monotone(
            mu in -10.0f64..10.0, b in -10.0f64..10.0, vy in 0.01f64..20.0, vw in 0.01f64..5.0, d in 0.01f64..3.0
        ) {
            let base = rv(mu, b, vy, vw);
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert_eq!(base, rv(b, mu, vy, vw));
            prop_assert_eq!(base, rv(mu - b, 0.0, vy, vw));
            let gap = (mu - b).abs();
            prop_assume!(gap > 1e-6);
            prop_assert!(rv(gap + d, 0.0, vy, vw) > base);
            prop_assert!(rv(gap, 0.0, vy * (1.0 + d), vw) < base);
        }
    }
}

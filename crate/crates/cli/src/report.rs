//! Machine-readable report written by every subcommand.

use serde::{Deserialize, Serialize};
use svysens::benchmark::{BenchmarkRecord, MinK, Mrcs};
use svysens::bootstrap::BootstrapInterval;
use svysens::calibration::Diagnostics;
use svysens::detection::DetectionReport;
use svysens::partial::PartialSweep;

pub const SCHEMA_VERSION: &str = "1.0.0";
pub const SCHEMA: &str = include_str!("../schema/report.schema.json");
pub const SE_LABEL: &str = "approximate design-based";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_sha256: String, seed: u64) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: svysens::VERSION.to_string(),
            config_sha256,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub outcome: String,
    pub n: usize,
    pub unweighted: Estimate,
    pub weighted: Estimate,
    pub se_method: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub b_star: f64,
    pub mu_hat: f64,
    pub var_y: f64,
    pub var_w: f64,
    pub a: f64,
    pub rv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub constraint: String,
    pub before: f64,
    pub after: f64,
    pub target: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighting {
    pub n: usize,
    pub rows_dropped: usize,
    pub rows_filtered: usize,
    pub diagnostics: Diagnostics,
    pub balance: Vec<BalanceRow>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub variable: String,
    pub r2_hat: f64,
    pub rho_hat: f64,
    pub mrcs: Mrcs,
    pub est_bias: f64,
    pub r2_loo: f64,
    pub rho_degenerate: bool,
    /// Multipliers reaching `b*`; absent when the benchmark has no imbalance or alignment.
    pub min_k: Option<MinK>,
}

impl BenchmarkRow {
    pub fn new(rec: &BenchmarkRecord, min_k: Option<MinK>) -> Self {
        BenchmarkRow {
            variable: rec.label.clone(),
            r2_hat: rec.r2_hat,
            rho_hat: rec.rho_hat,
            mrcs: rec.mrcs,
            est_bias: rec.est_bias,
            r2_loo: rec.r2_loo,
            rho_degenerate: rec.rho_degenerate,
            min_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourRef {
    pub files: Vec<String>,
    pub rho_points: usize,
    pub r2_points: usize,
    pub r2_max: f64,
    /// Share of grid nodes in the killer region.
    pub killer_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub schema_version: String,
    pub command: String,
    pub provenance: Provenance,
    pub estimates: Option<Estimates>,
    pub robustness: Option<RobustnessRow>,
    pub weighting: Option<Weighting>,
    pub benchmarks: Option<Vec<BenchmarkRow>>,
    pub contour: Option<ContourRef>,
    pub sweep: Option<PartialSweep>,
    pub detection: Option<DetectionReport>,
    pub bootstrap: Option<BootstrapInterval>,
}

impl SensitivityReport {
    pub fn new(command: &str, provenance: Provenance) -> Self {
        SensitivityReport {
            schema_version: SCHEMA_VERSION.to_string(),
            command: command.to_string(),
            provenance,
            estimates: None,
            robustness: None,
            weighting: None,
            benchmarks: None,
            contour: None,
            sweep: None,
            detection: None,
            bootstrap: None,
        }
    }

    pub fn to_json(&self) -> svysens::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

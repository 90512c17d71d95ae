use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use svysens::bootstrap::BootstrapMode;
use svysens::data::Kind;
use svysens::detection::EdgeRule;
use svysens::simulation::SyntheticDgp;
use svysens::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub weighting: WeightingSection,
    /// Substantive threshold; required by the sensitivity commands.
    pub b_star: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub contour: ContourSection,
    pub benchmark: BenchmarkSection,
    pub partial: Option<PartialSection>,
    pub bootstrap: BootstrapSection,
    pub detect: Option<DetectSection>,
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub survey: Option<PathBuf>,
    /// Unit-level population file.
    pub population: Option<PathBuf>,
    /// Marginal targets with columns `variable,level,target`.
    pub margins: Option<PathBuf>,
    pub outcome: Option<String>,
    pub weight_col: Option<String>,
    /// Population-weight column in the population file.
    pub population_weight_col: Option<String>,
    pub delimiter: char,
    pub filters: Vec<String>,
    pub kinds: BTreeMap<String, Kind>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            survey: None,
            population: None,
            margins: None,
            outcome: None,
            weight_col: None,
            population_weight_col: None,
            delimiter: ',',
            filters: Vec::new(),
            kinds: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightingSection {
    pub variables: Vec<String>,
    pub interactions: Vec<Vec<String>>,
    pub tolerance: f64,
    pub max_iter: usize,
    pub cap: Option<f64>,
}

impl Default for WeightingSection {
    fn default() -> Self {
        WeightingSection {
            variables: Vec::new(),
            interactions: Vec::new(),
            tolerance: 1e-8,
            max_iter: 200,
            cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourSection {
    pub rho_points: usize,
    pub r2_points: usize,
    pub r2_max: f64,
}

impl Default for ContourSection {
    fn default() -> Self {
        let r = svysens::summary::Resolution::default();
        ContourSection {
            rho_points: r.rho,
            r2_points: r.r2,
            r2_max: r.r2_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Single-covariate benchmarks; defaults to every weighting variable.
    pub covariates: Option<Vec<String>>,
    /// Groups of covariates removed together.
    pub subsets: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialSection {
    pub variable: String,
    /// Posited population means of the variable; a default grid is used if absent.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub replicates: usize,
    pub alpha: f64,
    pub rho: f64,
    pub r2: f64,
    pub mode: BootstrapMode,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        BootstrapSection {
            replicates: 1000,
            alpha: 0.05,
            rho: 0.0,
            r2: 0.0,
            mode: BootstrapMode::Recalibrate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub covariates: Vec<String>,
    pub sampling_set: Vec<String>,
    pub partial: Vec<String>,
    /// Fixed penalty on the standardized scale; cross-validation when absent.
    pub lambda: Option<f64>,
    pub folds: usize,
    pub rule: EdgeRule,
    pub max_len: usize,
    pub path_cap: usize,
    pub minimize_partial: bool,
}

impl Default for DetectSection {
    fn default() -> Self {
        DetectSection {
            covariates: Vec::new(),
            sampling_set: Vec::new(),
            partial: Vec::new(),
            lambda: None,
            folds: 10,
            rule: EdgeRule::Or,
            max_len: svysens::detection::DEFAULT_MAX_LEN,
            path_cap: svysens::detection::DEFAULT_PATH_CAP,
            minimize_partial: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub dgp: SyntheticDgp,
    pub replication: u64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for v in [
            &mut cfg.data.survey,
            &mut cfg.data.population,
            &mut cfg.data.margins,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if v.is_relative() {
                *v = base.join(&*v);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.b_star {
            if !b.is_finite() {
                return Err(Error::Config("b_star must be finite".into()));
            }
        }
        if self.bootstrap.replicates < 1 {
            return Err(Error::Config("bootstrap.replicates must be at least 1".into()));
        }
        if !(self.bootstrap.alpha > 0.0 && self.bootstrap.alpha < 1.0) {
            return Err(Error::Config("bootstrap.alpha must lie in (0, 1)".into()));
        }
        if self.data.population.is_some() && self.data.margins.is_some() {
            return Err(Error::Config(
                "give either data.population or data.margins, not both".into(),
            ));
        }
        Ok(())
    }

    pub fn b_star(&self) -> Result<f64> {
        self.b_star
            .ok_or_else(|| Error::Config("`b_star` is required: choose a substantively meaningful threshold".into()))
    }

    pub fn outcome(&self) -> Result<&str> {
        self.data
            .outcome
            .as_deref()
            .ok_or_else(|| Error::Config("missing `data.outcome`".into()))
    }

    /// SHA-256 of the canonical JSON form, for provenance.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::from_toml(
            r#"
            b_star = 0.0
            [data]
            survey = "s.csv"
            population = "p.csv"
            outcome = "y"
            [weighting]
            variables = ["a", "b"]
            interactions = [["a", "b"]]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.weighting.variables, vec!["a", "b"]);
        assert_eq!(cfg.bootstrap.replicates, 1000);
        assert_eq!(cfg.contour.rho_points, 201);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = RunConfig::from_toml("bstar = 1.0").unwrap_err();
        assert!(e.is_config());
    }

    #[test]
    fn b_star_has_no_default() {
        let cfg = RunConfig::default();
        assert!(cfg.b_star().unwrap_err().is_config());
        assert!(cfg.outcome().unwrap_err().is_config());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}

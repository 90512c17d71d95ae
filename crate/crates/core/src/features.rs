//! Feature mapping `X -> phi(X)` and target moments `T`.
//!
//! Categorical variables expand to level indicators with the lexicographically
//! smallest level dropped as reference. Interactions are products of the
//! expanded parts of each source, so a categorical-by-categorical interaction
//! yields one indicator per pair of non-reference levels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnData, Frame, Kind};
use crate::error::{Error, Result};
use crate::linalg::independent_columns;

/// Tolerance for categorical margins summing to one.
pub const MARGIN_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    LevelIndicator,
    Identity,
    ProductInteraction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub sources: Vec<String>,
    pub transform: Transform,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub terms: Vec<Term>,
}

impl FeatureMap {
    /// Main effects for `vars`: level indicators for categoricals, identity otherwise.
    pub fn main_effects(frame: &Frame, vars: &[String]) -> Result<Self> {
        let terms = vars
            .iter()
            .map(|v| {
                let c = frame.require(v)?;
                Ok(Term {
                    sources: vec![v.clone()],
                    transform: match c.kind {
                        Kind::Categorical => Transform::LevelIndicator,
                        _ => Transform::Identity,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMap { terms })
    }

    pub fn with_interaction(mut self, sources: &[String]) -> Result<Self> {
        if sources.len() < 2 {
            return Err(Error::Config("an interaction needs at least two source columns".into()));
        }
        let declared = self.sources();
        if let Some(s) = sources.iter().find(|s| !declared.contains(*s)) {
            return Err(Error::Config(format!("interaction references undeclared column `{s}`")));
        }
        self.terms.push(Term {
            sources: sources.to_vec(),
            transform: Transform::ProductInteraction,
        });
        Ok(self)
    }

    pub fn sources(&self) -> BTreeSet<String> {
        self.terms.iter().flat_map(|t| t.sources.iter().cloned()).collect()
    }

    /// Drops every term that references any of `vars` (including interactions).
    pub fn without(&self, vars: &[String]) -> FeatureMap {
        FeatureMap {
            terms: self
                .terms
                .iter()
                .filter(|t| !t.sources.iter().any(|s| vars.contains(s)))
                .cloned()
                .collect(),
        }
    }

    pub fn expand(&self, sample: &Frame) -> Result<ExpandedMap> {
        let mut columns = Vec::new();
        let mut levels: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for term in &self.terms {
            let mut parts_per_source: Vec<Vec<Part>> = Vec::new();
            for s in &term.sources {
                let c = sample.require(s)?;
                let parts = match c.kind {
                    Kind::Categorical => {
                        let lv = c.levels();
                        levels.insert(s.clone(), lv.clone());
                        lv.into_iter()
                            .skip(1)
                            .map(|l| Part {
                                column: s.clone(),
                                level: Some(l),
                            })
                            .collect()
                    }
                    _ => {
                        if term.transform == Transform::LevelIndicator {
                            return Err(Error::Config(format!(
                                "level-indicator term on non-categorical column `{s}`"
                            )));
                        }
                        vec![Part {
                            column: s.clone(),
                            level: None,
                        }]
                    }
                };
                parts_per_source.push(parts);
            }
            for combo in cartesian(&parts_per_source) {
                columns.push(ExpandedColumn { parts: combo });
            }
        }
        Ok(ExpandedMap { columns, levels })
    }
}

fn cartesian(sets: &[Vec<Part>]) -> Vec<Vec<Part>> {
    let mut out: Vec<Vec<Part>> = vec![Vec::new()];
    for set in sets {
        let mut next = Vec::with_capacity(out.len() * set.len());
        for prefix in &out {
            for p in set {
                let mut v = prefix.clone();
                v.push(p.clone());
                next.push(v);
            }
        }
        out = next;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Part {
    column: String,
    level: Option<String>,
}

/// One column of `phi(X)`: a product of level indicators and raw values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedColumn {
    parts: Vec<Part>,
}

impl ExpandedColumn {
    pub fn name(&self) -> String {
        self.parts
            .iter()
            .map(|p| match &p.level {
                Some(l) => format!("{}={}", p.column, l),
                None => p.column.clone(),
            })
            .collect::<Vec<_>>()
            .join(":")
    }

    pub fn sources(&self) -> Vec<String> {
        self.parts.iter().map(|p| p.column.clone()).collect()
    }

    /// Key into a margin file: (`a:b`, `level_a:level_b`).
    fn margin_key(&self) -> (String, String) {
        let var = self.sources().join(":");
        let lv = self
            .parts
            .iter()
            .filter_map(|p| p.level.clone())
            .collect::<Vec<_>>()
            .join(":");
        (var, lv)
    }

    fn values(&self, frame: &Frame) -> Result<Vec<f64>> {
        let mut out = vec![1.0; frame.n()];
        for p in &self.parts {
            let c = frame.require(&p.column)?;
            match (&p.level, &c.data) {
                (Some(l), ColumnData::Categorical(v)) => {
                    for (o, x) in out.iter_mut().zip(v) {
                        if x != l {
                            *o = 0.0;
                        }
                    }
                }
                (None, ColumnData::Numeric(v)) => {
                    for (o, x) in out.iter_mut().zip(v) {
                        *o *= x;
                    }
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "column `{}` has a different kind in this frame",
                        p.column
                    )))
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedMap {
    columns: Vec<ExpandedColumn>,
    levels: BTreeMap<String, Vec<String>>,
}

impl ExpandedMap {
    pub fn columns(&self) -> &[ExpandedColumn] {
        &self.columns
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(ExpandedColumn::name).collect()
    }

    /// Sample levels per categorical source; the first is the reference.
    pub fn levels(&self) -> &BTreeMap<String, Vec<String>> {
        &self.levels
    }

    pub fn design(&self, frame: &Frame) -> Result<DMatrix<f64>> {
        let n = frame.n();
        let mut x = DMatrix::zeros(n, self.columns.len());
        for (j, c) in self.columns.iter().enumerate() {
            let v = c.values(frame)?;
            x.set_column(j, &nalgebra::DVector::from_vec(v));
        }
        Ok(x)
    }

    pub fn targets(&self, target: &TargetSpec) -> Result<Vec<f64>> {
        match target {
            TargetSpec::Population(pop) => self.population_targets(pop),
            TargetSpec::Margins(m) => self.margin_targets(m),
        }
    }

    fn check_levels(&self, pop: &Frame) -> Result<()> {
        for (var, sample_levels) in &self.levels {
            let col = pop.require(var)?;
            if col.kind != Kind::Categorical {
                return Err(Error::Schema(format!(
                    "`{var}` is categorical in the sample but not in the target"
                )));
            }
            let pop_levels: BTreeSet<String> = col.levels().into_iter().collect();
            for l in sample_levels {
                if !pop_levels.contains(l) {
                    return Err(Error::UnknownLevel {
                        variable: var.clone(),
                        level: l.clone(),
                    });
                }
            }
            let sample_set: BTreeSet<&String> = sample_levels.iter().collect();
            if let Some(extra) = pop_levels.iter().find(|l| !sample_set.contains(l)) {
                return Err(Error::Invalid(format!(
                    "target level `{extra}` of `{var}` has no sample respondents"
                )));
            }
        }
        Ok(())
    }

    fn population_targets(&self, pop: &Frame) -> Result<Vec<f64>> {
        self.check_levels(pop)?;
        let w = pop.weights_or_uniform();
        let total: f64 = w.iter().sum();
        self.columns
            .iter()
            .map(|c| {
                let v = c.values(pop)?;
                Ok(v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total)
            })
            .collect()
    }

    fn margin_targets(&self, m: &Margins) -> Result<Vec<f64>> {
        for (var, levels) in &self.levels {
            for l in levels {
                if !m.entries.contains_key(&(var.clone(), l.clone())) {
                    return Err(Error::UnknownLevel {
                        variable: var.clone(),
                        level: l.clone(),
                    });
                }
            }
            let declared: Vec<&String> = m.entries.keys().filter(|(v, _)| v == var).map(|(_, l)| l).collect();
            if let Some(extra) = declared.iter().find(|l| !levels.contains(l)) {
                return Err(Error::Invalid(format!(
                    "target level `{extra}` of `{var}` has no sample respondents"
                )));
            }
        }
        self.columns
            .iter()
            .map(|c| {
                let key = c.margin_key();
                m.entries.get(&key).copied().ok_or_else(|| {
                    Error::Config(format!("margin file has no target for `{}` level `{}`", key.0, key.1))
                })
            })
            .collect()
    }
}

/// Target moments supplied directly, keyed by (variable, level).
///
/// Continuous and binary variables use an empty level. Interactions use
/// `a:b` as the variable and `la:lb` as the level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Margins {
    pub entries: BTreeMap<(String, String), f64>,
}

#[derive(Debug, Deserialize)]
struct MarginRow {
    variable: String,
    #[serde(default)]
    level: Option<String>,
    target: f64,
}

impl Margins {
    pub fn insert(&mut self, variable: &str, level: &str, target: f64) {
        self.entries.insert((variable.to_string(), level.to_string()), target);
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut m = Margins::default();
        for row in rdr.deserialize::<MarginRow>() {
            let row = row?;
            m.insert(&row.variable, row.level.as_deref().unwrap_or(""), row.target);
        }
        Ok(m)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    /// Categorical margins lie in [0, 1] and sum to one per variable.
    pub fn validate(&self, kinds: &BTreeMap<String, Kind>) -> Result<()> {
        let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
        for ((var, level), &t) in &self.entries {
            if !t.is_finite() {
                return Err(Error::Config(format!("non-finite target for `{var}`")));
            }
            let all_discrete = var
                .split(':')
                .all(|v| matches!(kinds.get(v), Some(Kind::Categorical) | Some(Kind::Binary)));
            if all_discrete && !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!(
                    "target {t} for `{var}`=`{level}` is outside [0, 1]"
                )));
            }
            let all_categorical = var.split(':').all(|v| kinds.get(v) == Some(&Kind::Categorical));
            if all_categorical {
                *sums.entry(var.as_str()).or_default() += t;
            }
        }
        for (var, s) in sums {
            if (s - 1.0).abs() > MARGIN_SUM_TOL {
                return Err(Error::Config(format!("levels of `{var}` sum to {s}, expected 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// Population records weighted by their (positive) population weights.
    Population(Frame),
    Margins(Margins),
}

/// Design matrix over the sample and the matching target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub names: Vec<String>,
    pub sources: Vec<Vec<String>>,
    pub x: DMatrix<f64>,
    pub targets: Vec<f64>,
}

impl Features {
    pub fn ncols(&self) -> usize {
        self.names.len()
    }
}

/// Builds `phi(X)` over the sample and `T` from the target. Rank-deficient
/// designs are rejected with the dependent columns listed.
pub fn build_features(sample: &Frame, target: &TargetSpec, map: &FeatureMap) -> Result<Features> {
    let expanded = map.expand(sample)?;
    let x = expanded.design(sample)?;
    let names = expanded.names();
    let dependent: Vec<String> = independent_columns(&x)
        .into_iter()
        .zip(&names)
        .filter(|(k, _)| !k)
        .map(|(_, n)| n.clone())
        .collect();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(dependent));
    }
    let targets = expanded.targets(target)?;
    Ok(Features {
        sources: expanded.columns().iter().map(ExpandedColumn::sources).collect(),
        names,
        x,
        targets,
    })
}

/// All level targets of one categorical variable, reference level included.
pub fn level_targets(var: &str, target: &TargetSpec) -> Result<BTreeMap<String, f64>> {
    match target {
        TargetSpec::Population(pop) => {
            let col = pop.require(var)?;
            let v = col
                .as_categorical()
                .ok_or_else(|| Error::Schema(format!("`{var}` is not categorical")))?;
            let w = pop.weights_or_uniform();
            let total: f64 = w.iter().sum();
            let mut out: BTreeMap<String, f64> = BTreeMap::new();
            for (l, wi) in v.iter().zip(&w) {
                *out.entry(l.clone()).or_default() += wi / total;
            }
            Ok(out)
        }
        TargetSpec::Margins(m) => Ok(m
            .entries
            .iter()
            .filter(|((v, _), _)| v == var)
            .map(|((_, l), t)| (l.clone(), *t))
            .collect()),
    }
}

/// Convenience for building a frame column from string values.
pub fn cat_column(name: &str, values: &[&str]) -> Column {
    Column::categorical(name, values.iter().map(|s| s.to_string()).collect())
}

//! Survey and target-population ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Categorical,
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: Kind,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, kind: Kind, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            kind,
            data: ColumnData::Numeric(values),
        }
    }

    pub fn categorical(name: impl Into<String>, values: Vec<String>) -> Self {
        Column {
            name: name.into(),
            kind: Kind::Categorical,
            data: ColumnData::Categorical(values),
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&[String]> {
        match &self.data {
            ColumnData::Categorical(v) => Some(v),
            ColumnData::Numeric(_) => None,
        }
    }

    /// Sorted distinct levels of a categorical column.
    pub fn levels(&self) -> Vec<String> {
        match &self.data {
            ColumnData::Categorical(v) => v.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
            ColumnData::Numeric(_) => Vec::new(),
        }
    }

    fn take(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => ColumnData::Categorical(rows.iter().map(|&i| v[i].clone()).collect()),
        };
        Column {
            name: self.name.clone(),
            kind: self.kind,
            data,
        }
    }
}

/// A rectangular table of typed columns with an optional positive row weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    columns: Vec<Column>,
    weights: Option<Vec<f64>>,
    n: usize,
}

impl Frame {
    pub fn new(columns: Vec<Column>, weights: Option<Vec<f64>>) -> Result<Self> {
        let n = columns
            .first()
            .map(Column::len)
            .or_else(|| weights.as_ref().map(Vec::len))
            .unwrap_or(0);
        for c in &columns {
            if c.len() != n {
                return Err(Error::LengthMismatch {
                    what: "frame column",
                    left: c.len(),
                    right: n,
                });
            }
            if let (Kind::Binary, Some(v)) = (c.kind, c.as_numeric()) {
                if v.iter().any(|&x| x != 0.0 && x != 1.0) {
                    return Err(Error::Schema(format!(
                        "binary column `{}` has values other than 0/1",
                        c.name
                    )));
                }
            }
        }
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(Error::LengthMismatch {
                    what: "frame weights",
                    left: w.len(),
                    right: n,
                });
            }
            if let Some(i) = w.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::Schema(format!(
                    "weights must be strictly positive (row {} has {})",
                    i, w[i]
                )));
            }
        }
        Ok(Frame { columns, weights, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found")))
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Row weights, uniform when none were supplied.
    pub fn weights_or_uniform(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.n])
    }

    pub fn take(&self, rows: &[usize]) -> Frame {
        Frame {
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            weights: self.weights.as_ref().map(|w| rows.iter().map(|&i| w[i]).collect()),
            n: rows.len(),
        }
    }

    pub fn schema(&self) -> Vec<(String, Kind)> {
        self.columns.iter().map(|c| (c.name.clone(), c.kind)).collect()
    }
}

/// Survey sample: covariates, a numeric outcome, and base weights `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyFrame {
    frame: Frame,
    outcome_col: String,
    outcome: Vec<f64>,
}

impl SurveyFrame {
    pub fn new(frame: Frame, outcome_col: impl Into<String>) -> Result<Self> {
        let outcome_col = outcome_col.into();
        let outcome = frame
            .column(&outcome_col)
            .ok_or_else(|| Error::Schema(format!("outcome column `{outcome_col}` missing")))?
            .as_numeric()
            .ok_or_else(|| Error::Schema(format!("outcome column `{outcome_col}` is not numeric")))?
            .to_vec();
        if frame.n() < 2 {
            return Err(Error::TooFewRows(frame.n()));
        }
        Ok(SurveyFrame {
            frame,
            outcome_col,
            outcome,
        })
    }

    pub fn n(&self) -> usize {
        self.frame.n()
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn outcome_col(&self) -> &str {
        &self.outcome_col
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.frame.column(name)
    }

    pub fn base_weights(&self) -> Vec<f64> {
        self.frame.weights_or_uniform()
    }

    /// Rows `rows` (with repetition allowed), e.g. for a bootstrap draw.
    pub fn take(&self, rows: &[usize]) -> SurveyFrame {
        SurveyFrame {
            frame: self.frame.take(rows),
            outcome_col: self.outcome_col.clone(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

/// Row filter of the form `column op value`, applied before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub column: String,
    pub op: FilterOp,
    pub value: String,
}

impl std::str::FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // two-char operators first so `<=` is not read as `<`
        const OPS: [(&str, FilterOp); 6] = [
            ("==", FilterOp::Eq),
            ("!=", FilterOp::Ne),
            ("<=", FilterOp::Le),
            (">=", FilterOp::Ge),
            ("<", FilterOp::Lt),
            (">", FilterOp::Gt),
        ];
        for (tok, op) in OPS {
            if let Some(pos) = s.find(tok) {
                let column = s[..pos].trim();
                let value = s[pos + tok.len()..].trim();
                if column.is_empty() {
                    break;
                }
                return Ok(Filter {
                    column: column.to_string(),
                    op,
                    value: value.trim_matches('"').to_string(),
                });
            }
        }
        Err(Error::Config(format!("cannot parse filter `{s}`")))
    }
}

impl Filter {
    fn keep(&self, raw: &str) -> bool {
        let (a, b) = (raw.parse::<f64>(), self.value.parse::<f64>());
        let ord = match (a, b) {
            (Ok(x), Ok(y)) => x.partial_cmp(&y),
            _ => Some(raw.cmp(self.value.as_str())),
        };
        let Some(ord) = ord else { return false };
        use std::cmp::Ordering::*;
        match self.op {
            FilterOp::Eq => ord == Equal,
            FilterOp::Ne => ord != Equal,
            FilterOp::Lt => ord == Less,
            FilterOp::Le => ord != Greater,
            FilterOp::Gt => ord == Greater,
            FilterOp::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Outcome column; `None` when loading a target-population frame.
    pub outcome: Option<String>,
    /// Covariate columns to keep. Other columns are ignored (except in filters).
    pub columns: Vec<String>,
    /// Kind overrides; unlisted columns are inferred.
    #[serde(default)]
    pub kinds: BTreeMap<String, Kind>,
    #[serde(default)]
    pub weight_col: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub filters: Vec<Filter>,
}

fn default_delimiter() -> char {
    ','
}

impl IngestConfig {
    pub fn new(outcome: Option<&str>, columns: &[&str]) -> Self {
        IngestConfig {
            outcome: outcome.map(str::to_string),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            kinds: BTreeMap::new(),
            weight_col: None,
            delimiter: ',',
            filters: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub kept: usize,
    pub dropped: usize,
    pub filtered: usize,
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "N/A" | "NaN" | "nan" | "." | "null")
}

/// Reads a delimited table into a [`Frame`] with listwise deletion of rows
/// missing any used column.
pub fn read_frame<R: Read>(reader: R, cfg: &IngestConfig) -> Result<(Frame, LoadStats)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter as u8)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in header")))
    };

    let mut used: Vec<String> = Vec::new();
    if let Some(o) = &cfg.outcome {
        used.push(o.clone());
    }
    for c in &cfg.columns {
        if !used.contains(c) {
            used.push(c.clone());
        }
    }
    if let Some(w) = &cfg.weight_col {
        if !used.contains(w) {
            used.push(w.clone());
        }
    }
    let used_idx = used.iter().map(|c| index_of(c)).collect::<Result<Vec<_>>>()?;
    let filter_idx = cfg
        .filters
        .iter()
        .map(|f| index_of(&f.column))
        .collect::<Result<Vec<_>>>()?;

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); used.len()];
    let mut filtered = 0usize;
    let mut total = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        total += 1;
        let pass = cfg
            .filters
            .iter()
            .zip(&filter_idx)
            .all(|(f, &i)| f.keep(rec.get(i).unwrap_or("")));
        if !pass {
            filtered += 1;
            continue;
        }
        for (slot, &i) in raw.iter_mut().zip(&used_idx) {
            slot.push(rec.get(i).unwrap_or("").to_string());
        }
    }

    for (name, col) in used.iter().zip(&raw) {
        if !col.is_empty() && col.iter().all(|v| is_missing(v)) {
            return Err(Error::EmptyColumn(name.clone()));
        }
    }

    let rows = raw.first().map(Vec::len).unwrap_or(0);
    let keep: Vec<usize> = (0..rows)
        .filter(|&r| raw.iter().all(|col| !is_missing(&col[r])))
        .collect();
    let dropped = rows - keep.len();
    if dropped > 0 {
        warn!("dropped {dropped} of {rows} rows with missing values (listwise deletion)");
    }
    if keep.is_empty() {
        return Err(Error::Invalid(format!(
            "zero usable rows ({total} read, {filtered} filtered, {dropped} with missing values)"
        )));
    }

    let mut columns = Vec::new();
    let mut weights = None;
    for (name, col) in used.iter().zip(&raw) {
        let values: Vec<&str> = keep.iter().map(|&r| col[r].as_str()).collect();
        if Some(name) == cfg.weight_col.as_ref() {
            weights = Some(parse_numeric(name, &values, &keep)?);
            continue;
        }
        let is_outcome = Some(name) == cfg.outcome.as_ref();
        let kind = match cfg.kinds.get(name) {
            Some(k) => *k,
            None if is_outcome => Kind::Continuous,
            None => infer_kind(&values),
        };
        let column = match kind {
            Kind::Categorical if !is_outcome => {
                Column::categorical(name.clone(), values.iter().map(|s| s.to_string()).collect())
            }
            _ => Column::numeric(name.clone(), kind, parse_numeric(name, &values, &keep)?),
        };
        columns.push(column);
    }
    let frame = Frame::new(columns, weights)?;
    info!("loaded {} rows ({dropped} dropped, {filtered} filtered)", frame.n());
    Ok((
        frame,
        LoadStats {
            kept: keep.len(),
            dropped,
            filtered,
        },
    ))
}

fn parse_numeric(name: &str, values: &[&str], rows: &[usize]) -> Result<Vec<f64>> {
    values
        .iter()
        .zip(rows)
        .map(|(v, &r)| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    column: name.to_string(),
                    row: r + 1,
                    value: v.to_string(),
                })
        })
        .collect()
}

fn infer_kind(values: &[&str]) -> Kind {
    let nums: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    match nums {
        Some(v) if v.iter().all(|&x| x == 0.0 || x == 1.0) => Kind::Binary,
        Some(_) => Kind::Continuous,
        None => Kind::Categorical,
    }
}

/// Loads a survey file. Returns the frame and (kept, dropped) row counts.
pub fn load_survey(path: &Path, cfg: &IngestConfig) -> Result<(SurveyFrame, LoadStats)> {
    let outcome = cfg
        .outcome
        .clone()
        .ok_or_else(|| Error::Config("outcome column not configured".into()))?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (frame, stats) = read_frame(file, cfg)?;
    if frame.n() < 2 {
        return Err(Error::TooFewRows(frame.n()));
    }
    Ok((SurveyFrame::new(frame, outcome)?, stats))
}

/// Loads a target-population frame (records with an optional population-weight column).
pub fn load_population(path: &Path, cfg: &IngestConfig) -> Result<(Frame, LoadStats)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_frame(file, cfg)
}

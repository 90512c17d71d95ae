use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Bad configuration or input schema; maps to exit code 2 in the CLI.
    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("n >= 2 required, got {0} usable rows")]
    TooFewRows(usize),

    #[error("column `{0}` has no usable values")]
    EmptyColumn(String),

    #[error("column `{column}` is not numeric (row {row}: `{value}`)")]
    NonNumeric { column: String, row: usize, value: String },

    #[error("level `{level}` of `{variable}` appears in the survey but not in the target")]
    UnknownLevel { variable: String, level: String },

    #[error("rank-deficient design; dependent columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error(
        "infeasible target for constraint `{constraint}`: target {target} outside achievable range ({min}, {max})"
    )]
    Infeasible {
        constraint: String,
        target: f64,
        min: f64,
        max: f64,
    },

    #[error("solver did not converge after {iterations} iterations (max violation {max_violation:e})")]
    NonConvergence { iterations: usize, max_violation: f64 },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("R^2 = 1 requires a posited var_S(w*)")]
    MissingIdealVariance,

    #[error("covariate `{covariate}`: {source}")]
    Covariate {
        covariate: String,
        #[source]
        source: Box<Error>,
    },

    #[error("path enumeration exceeded cap of {0} paths; use a sparser graph (larger lambda) or a smaller max_len")]
    PathCap(usize),

    #[error("bootstrap dropped {dropped} of {total} draws (over 5%)")]
    BootstrapDrops { dropped: usize, total: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from user configuration or input schema.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Schema(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::TooFewRows(_)
            | Error::EmptyColumn(_)
            | Error::NonNumeric { .. }
            | Error::UnknownLevel { .. }
            | Error::RankDeficient(_)
            | Error::Io { .. }
            | Error::MissingIdealVariance => true,
            Error::Covariate { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub(crate) fn with_covariate(self, covariate: impl Into<String>) -> Self {
        Error::Covariate {
            covariate: covariate.into(),
            source: Box::new(self),
        }
    }
}

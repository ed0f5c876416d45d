use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("missing target column `{0}`")]
    MissingTargetColumn(String),

    #[error("no parseable rows ({rejected} rejected)")]
    NoParseableRows { rejected: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("target must not be constant (min = max = {0})")]
    ConstantTarget(f64),

    #[error("attack too small to realize: rate {rate} selects no rows out of {rows}")]
    AttackTooSmall { rate: f64, rows: usize },

    #[error("majority-clean violated: {poison} poison points for {clean} clean points")]
    MajorityViolated { poison: usize, clean: usize },

    #[error("surrogate pool too small: {0} rows (need at least 50)")]
    PoolTooSmall(usize),

    #[error("singular value decomposition failed to converge")]
    SvdFailed,

    #[error("empty grid: no models or no rates")]
    EmptyGrid,
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}

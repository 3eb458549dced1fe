use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed row in an input file, with its 1-based line number.
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    /// A household violates a record-level invariant.
    #[error("household {household_id}: {msg}")]
    Validation { household_id: u64, msg: String },

    /// Referential-integrity failure in the geography hierarchy.
    #[error("geography: {0}")]
    Geography(String),

    /// Invalid parameter or run-configuration value.
    #[error("config: {0}")]
    Config(String),

    #[error("cannot generate an empty population (n_households = 0)")]
    EmptyPopulation,

    /// Two count tables that must share a key set do not.
    #[error("count tables are not aligned: {missing} key(s) missing from one side (first: {first})")]
    Alignment { missing: usize, first: String },

    #[error("degenerate regression design: {0}")]
    DegenerateDesign(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown statistic {name:?}; available: {available}")]
    UnknownStatistic { name: String, available: String },

    /// The calibration bracket does not straddle the target variance.
    #[error(
        "calibration bracket ({lo}, {hi}) does not straddle target {target}: \
         V({lo}) = {v_lo:.6}, V({hi}) = {v_hi:.6}"
    )]
    Calibration { lo: f64, hi: f64, v_lo: f64, v_hi: f64, target: f64 },

    /// A swap log that does not match the microdata it claims to describe.
    #[error("swap log inconsistent with microdata: {0}")]
    Audit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

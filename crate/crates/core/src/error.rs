use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Variants map onto a short machine-readable code (see [`Error::code`]) and a
/// process exit status (see [`Error::exit_code`]) used by the command-line driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular system: normal equations are not positive definite")]
    SingularSystem,

    #[error("zero-norm vector has no direction")]
    ZeroNorm,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class index {index} out of range for {classes} classes")]
    Label { index: usize, classes: usize },

    #[error("stale forward cache: cache is from parameter version {cache}, network is at {current}")]
    StaleCache { cache: u64, current: u64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("control micro-batch is empty: round({f} * {m}) = 0")]
    ControlBatchEmpty { m: usize, f: f64 },

    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("stepsize {eta} exceeds 1/L = {limit}")]
    Stepsize { eta: f64, limit: f64 },

    #[error("invalid moment triple: {0}")]
    Moment(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("budget error: {0}")]
    Budget(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: u64, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable identifier printed by the CLI on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "DimensionError",
            Error::SingularSystem => "SingularSystem",
            Error::ZeroNorm => "ZeroNorm",
            Error::Config(_) => "ConfigError",
            Error::Label { .. } => "LabelError",
            Error::StaleCache { .. } => "StaleCache",
            Error::InsufficientData(_) => "InsufficientData",
            Error::ControlBatchEmpty { .. } => "ControlBatchEmpty",
            Error::DegenerateStats(_) => "DegenerateStats",
            Error::Domain(_) => "DomainError",
            Error::Stepsize { .. } => "StepsizeError",
            Error::Moment(_) => "MomentError",
            Error::Data(_) => "DataError",
            Error::Budget(_) => "BudgetError",
            Error::Format { .. } => "FormatError",
            Error::Checkpoint(_) => "CheckpointError",
            Error::Io(_) => "IoError",
        }
    }

    /// 2 = configuration, 3 = data, 4 = numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Budget(_)
            | Error::Domain(_)
            | Error::Stepsize { .. }
            | Error::Moment(_)
            | Error::ControlBatchEmpty { .. } => 2,
            Error::Data(_) | Error::Format { .. } | Error::Label { .. } | Error::InsufficientData(_) | Error::Io(_) => {
                3
            }
            Error::Dimension(_)
            | Error::SingularSystem
            | Error::ZeroNorm
            | Error::StaleCache { .. }
            | Error::DegenerateStats(_)
            | Error::Checkpoint(_) => 4,
        }
    }
}

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension(format!("{what}: expected {expected}, got {got}")))
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("out of range: {field} = {value}")]
    OutOfRange { field: &'static str, value: f64 },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Parameters from the best epoch before the failure.
        last_good: Box<crate::architectures::Model>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::Internal(_) => "internal",
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Parse { .. } => "parse",
            Error::Calibration(_) => "calibration",
            Error::Numerical(_) => "numerical",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    /// Process exit status: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 1,
            Error::Numerical(_) | Error::Diverged { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

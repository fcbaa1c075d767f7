use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("label {label} out of range for {classes} classes (row {row})")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },

    #[error("NaN gradient in parameter {param}")]
    NanGradient { param: usize },

    #[error("training diverged (non-finite loss) in run {run}, member {member}, epoch {epoch}")]
    Diverged { run: usize, member: usize, epoch: usize },

    #[error(transparent)]
    Uq(#[from] crate::uq::UqError),

    #[error(transparent)]
    Idx(#[from] crate::data::idx::IdxError),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("missing MNIST file {path}; expected one of: {expected}")]
    MissingData { path: PathBuf, expected: String },

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Process exit code for the command-line driver: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Idx(_)
            | Error::Dataset(_)
            | Error::MissingData { .. }
            | Error::Csv(_)
            | Error::Io { .. }
            | Error::LabelOutOfRange { .. } => 2,
            Error::Shape { .. }
            | Error::InvalidTensor(_)
            | Error::NonScalarLoss(_)
            | Error::NanGradient { .. }
            | Error::Diverged { .. }
            | Error::Uq(_) => 3,
        }
    }
}

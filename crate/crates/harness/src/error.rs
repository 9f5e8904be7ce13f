use serde::Serialize;
use thiserror::Error;

use confgate_core::engine::LogReadError;
use confgate_core::forge::ForgeError;
use confgate_core::loss::LossError;
use confgate_core::metrics::MetricsError;
use confgate_core::retrieval::RetrievalError;
use confgate_core::score::ScoreError;
use confgate_core::trajectory::DatasetError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Log(#[from] LogReadError),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Input(String),
    #[error("gradient check failed: worst sft {worst_sft:e}, worst dpo {worst_dpo:e}")]
    GradCheck { worst_sft: f64, worst_dpo: f64 },
}

/// Machine-readable form printed on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Dataset(DatasetError::InconsistentHistory { .. }) => "InconsistentHistory",
            CliError::Dataset(DatasetError::Io(_)) => "Io",
            CliError::Dataset(_) => "SchemaError",
            CliError::Score(_) => "ScoreOutOfRange",
            CliError::Forge(_) => "ForgeError",
            CliError::Retrieval(_) => "RetrievalError",
            CliError::Metrics(MetricsError::MissingScreenDims(_)) => "MissingScreenDims",
            CliError::Metrics(_) => "MetricsError",
            CliError::Loss(_) => "LossError",
            CliError::Log(_) => "LogFormat",
            CliError::File { .. } | CliError::Io(_) => "Io",
            CliError::Csv(_) => "Io",
            CliError::Input(_) => "InvalidInput",
            CliError::GradCheck { .. } => "GradCheckFailed",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.kind(),
            message: self.to_string(),
        }
    }
}

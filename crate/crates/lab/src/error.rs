use std::path::PathBuf;

use plugin_core::corpus::CorpusError;
use plugin_core::decoding::DecodeError;
use plugin_core::metrics::MetricError;
use plugin_core::models::ModelError;
use plugin_core::noise::NoiseError;
use plugin_core::plugin::PluginError;
use thiserror::Error;

use crate::data::DataError;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing checkpoint {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("bad checkpoint {}: {reason}", path.display())]
    BadCheckpoint { path: PathBuf, reason: String },
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabError {
    pub fn config(msg: impl Into<String>) -> Self {
        LabError::Config(msg.into())
    }

    /// 1 for anything the user fixes in the config or flags, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        let config = match self {
            LabError::Config(_) => true,
            LabError::Data(DataError::FileNotFound(_)) => true,
            LabError::Corpus(CorpusError::BadFraction(_)) => true,
            LabError::Model(ModelError::BadConfig(_)) => true,
            LabError::Plugin(PluginError::BadConfig(_) | PluginError::AlphaOutOfRange(_)) => true,
            LabError::Decode(DecodeError::BadStrategy(_)) => true,
            LabError::Noise(e) => matches!(
                e,
                NoiseError::BadStrength(_) | NoiseError::BadGrid | NoiseError::BadConfig(_)
            ),
            _ => false,
        };
        if config {
            1
        } else {
            2
        }
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

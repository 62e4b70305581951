use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot ingest {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("record {record}: missing required leads {missing:?}")]
    MissingLeads { record: String, missing: Vec<String> },

    #[error("record {record}: {count} non-finite samples (first in lead {lead} at sample {sample})")]
    NonFinite {
        record: String,
        count: usize,
        lead: String,
        sample: usize,
    },

    #[error("unsupported sampling rate {rate} Hz (must be an integer multiple of {target} Hz)")]
    UnsupportedRate { rate: u32, target: u32 },

    #[error("record {record}: {samples} samples is shorter than one {needed}-sample window")]
    TooShort {
        record: String,
        samples: usize,
        needed: usize,
    },

    #[error("cannot split an empty id list")]
    EmptySplit,

    #[error("unknown lead label {0:?}")]
    UnknownLead(String),

    #[error("lead list must be non-empty and distinct: {0}")]
    InvalidLeadList(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("incompatible checkpoint {path}: written by pipeline {found}, expected {expected}")]
    IncompatibleVersion {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("incomplete experiment group {group}: missing {missing:?}")]
    MissingExperiments { group: String, missing: Vec<String> },

    #[error("corrupt dataset file {path}: {reason}")]
    CorruptDataset { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("experiment {id}: {source}")]
    Experiment {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("plot error: {0}")]
    Plot(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_experiment(self, id: &str) -> Self {
        match self {
            e @ Error::Experiment { .. } => e,
            other => Error::Experiment {
                id: id.to_string(),
                source: Box::new(other),
            },
        }
    }
}

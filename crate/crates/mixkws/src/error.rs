//! Crate-wide error type.
//!
//! Every error carries a stable machine-parsable class name (see
//! [`Error::class`]) which the CLI prints on its single failure line.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },

    #[error("empty waveform is not allowed")]
    EmptyWaveform,

    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("invalid mix weights: {0}")]
    InvalidMixWeights(String),

    #[error("wav format error in {path}: {detail}")]
    WavFormat { path: PathBuf, detail: String },

    #[error("input too short: {got} samples, need at least {need}")]
    InputTooShort { got: usize, need: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid label vector: {0}")]
    InvalidLabel(String),

    #[error("invalid strategy configuration: {0}")]
    InvalidStrategy(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("stale forward cache: model was modified after the forward pass")]
    StaleCache,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("alignment parse error at {path}:{line}: {detail}")]
    AlignmentParse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("degenerate detection log: {0}")]
    DegenerateLog(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("experiment plan error: {0}")]
    Plan(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-parsable class for the CLI's one-line failure output.
    pub fn class(&self) -> &'static str {
        match self {
            Error::SampleRateMismatch { .. } => "sample-rate-mismatch",
            Error::EmptyWaveform => "empty-waveform",
            Error::InvalidWaveform(_) => "invalid-waveform",
            Error::InvalidMixWeights(_) => "invalid-mix-weights",
            Error::WavFormat { .. } => "wav-format",
            Error::InputTooShort { .. } => "input-too-short",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::InvalidLabel(_) => "invalid-label",
            Error::InvalidStrategy(_) => "invalid-strategy",
            Error::NonFinite(_) => "non-finite",
            Error::Diverged { .. } => "diverged",
            Error::StaleCache => "stale-cache",
            Error::Checkpoint(_) => "checkpoint",
            Error::Dataset(_) => "dataset",
            Error::AlignmentParse { .. } => "alignment-parse",
            Error::DegenerateLog(_) => "degenerate-log",
            Error::Metric(_) => "metric",
            Error::Plan(_) => "plan",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

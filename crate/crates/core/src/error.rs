use std::path::PathBuf;

use crate::bitflip::BitAddress;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("layer {index}: {source}")]
    Layer {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bit index {0} out of range (expected 0..=31)")]
    BitIndex(u32),

    #[error("invalid bit address {address}: {reason}")]
    InvalidAddress { address: BitAddress, reason: String },

    #[error("cannot predict from empty logits")]
    EmptyLogits,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("scan scope selects no bits")]
    EmptyScope,

    #[error("no perturbation results to reduce")]
    EmptyResults,

    #[error("blob checksum mismatch: manifest declares {expected}, blob hashes to {actual}")]
    Checksum { expected: String, actual: String },

    #[error("element count mismatch: {0}")]
    CountMismatch(String),

    #[error("unknown layer type `{0}`")]
    UnknownLayerType(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("dataset header magic mismatch")]
    BadMagic,

    #[error("dataset sample {index}: label {label} is not below class count {classes}")]
    LabelOutOfRange { index: usize, label: u8, classes: u32 },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("policy error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Policy { line: Option<usize>, message: String },

    #[error("scope error: {0}")]
    Scope(String),

    #[error("invalid exposure: {0}")]
    InvalidExposure(String),

    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),

    #[error("cannot normalize: {0}")]
    Normalization(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_layer(self, index: usize) -> Self {
        Error::Layer {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! On-disk formats for models and datasets.

pub mod dataset;
pub mod manifest;

pub use dataset::{load_dataset, save_dataset, LabeledDataset, DATASET_MAGIC};
pub use manifest::{
    load_model, manifest_notes, parse_model, render_model, save_model, save_model_with_notes, sha256_hex,
    FORMAT_VERSION,
};

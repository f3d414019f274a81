//! Deterministic feedforward inference.

pub mod layer;
pub mod network;
pub mod ops;

pub use layer::LayerSpec;
pub use network::{predict, LayerParams, Model, Network, PatchedNetwork, Prediction, WordAddress};
pub use ops::{affine_norm, avg_pool, conv2d, flatten, fully_connected, max_pool, relu, ConvGeometry};

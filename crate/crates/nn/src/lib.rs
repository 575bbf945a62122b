//! Unsupervised modal decomposition network for truss populations: a
//! reverse-mode tape, the graph-set model and its physics-informed training.

pub mod checkpoint;
pub mod error;
pub mod network;
pub mod params;
pub mod tape;
pub mod training;

pub use error::{NnError, Result};
pub use network::{DecompositionResult, GraphInput, Model, ModelConfig, Variant};
pub use training::{LossWeights, TrainConfig};

//! Chest X-ray screening toolkit.
//!
//! Builds VGG16, ResNet50 and InceptionV3 style networks from scratch, runs
//! them as frozen feature extractors, fine-tunes a replaced
//! `global average pool → dense → softmax` head, and evaluates the result
//! with confusion matrices, classification reports and ROC analysis.

pub mod arch;
pub mod data;
pub mod eval;
pub mod head;
pub mod network;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod weights;

pub use arch::{build, ArchError, ArchitectureConfig, DepthPreset, Family, FeatureShape, LayerGraph, WidthScale};
pub use network::{Network, NetworkError};
pub use tensor::{Matrix, Tensor, TensorError};
pub use weights::{ModelBundle, Preprocessing, WeightArray, WeightsError};

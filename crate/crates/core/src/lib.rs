//! Self-regularization with retrieved unlabeled neighbors.
//!
//! * [`embedding`]: feature vectors, cosine similarity, corpus files
//! * [`neighbor_search`]: sharded map/reduce top-k regularizer search
//! * [`mil_pooling`]: Noisy-OR pooling, its loss and gradient, localization
//! * [`perturbation`]: FGSM, VAT and neighbor-based augmentation
//! * [`model`]: a small ReLU perceptron with exact gradients and SGD
//! * [`synthetic`]: the two-class multimodal benchmark generator
//! * [`metrics`]: error, average precision, point localization
//! * [`experiment`]: benchmark orchestration and the `viser` CLI
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod embedding;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mil_pooling;
pub mod model;
pub mod neighbor_search;
pub mod perturbation;
pub mod rng;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FeatureVector = embedding::FeatureVector<f64>;
pub type FeatureVector32 = embedding::FeatureVector<f32>;
pub type EmbeddingRecord = embedding::EmbeddingRecord<f64>;
pub type EmbeddingRecord32 = embedding::EmbeddingRecord<f32>;
pub type Corpus = embedding::Corpus<f64>;
pub type Corpus32 = embedding::Corpus<f32>;
pub type LogitGrid = mil_pooling::LogitGrid<f64>;
pub type LogitGrid32 = mil_pooling::LogitGrid<f32>;
pub type MlpParams = model::MlpParams<f64>;
pub type MlpParams32 = model::MlpParams<f32>;
pub type LabeledSample = model::LabeledSample<f64>;

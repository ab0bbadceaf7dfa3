//! Fine-grained entity typing: a featurizer built from an entity average,
//! an entity-attended bi-LSTM over the sentence and an MLP over document
//! vectors, a multi-label logistic classifier with per-type thresholds,
//! and the strict / loose-macro / loose-micro evaluation metrics.

pub mod analysis;
pub mod classifier;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod encoders;
pub mod error;
pub mod io;
pub mod math;
pub mod metrics;
pub mod model;
pub mod thresholds;
pub mod training;

pub use error::{Error, Result};

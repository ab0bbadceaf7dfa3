//! The featurizer's building blocks: entity averaging, the stacked
//! bi-LSTM, entity-aligned attention and the document MLP.

pub mod attention;
pub mod document;
pub mod entity;
pub mod lstm;

pub use attention::{attention_weights, encode_sentence};
pub use document::DocMlp;
pub use entity::{encode_entity, FeatureVector};
pub use lstm::{BiLstmEncoder, BiLstmLayer, LstmDirection};

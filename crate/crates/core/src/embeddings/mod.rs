//! Word vectors, document vectors and the PV-DM model that produces them.

mod docs;
mod pvdm;
mod words;

pub use docs::{load_doc_vectors, read_doc_vectors, DocEmbeddingTable};
pub use pvdm::{train_pvdm, PvdmConfig, PvdmModel};
pub use words::{load_word_vectors, read_word_vectors, OovPolicy, WordEmbeddingTable};

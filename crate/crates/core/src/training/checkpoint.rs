//! Checkpoint container.
//!
//! ```text
//! magic      8 bytes   "ENTYPER\0"
//! version    u32 LE
//! header_len u64 LE
//! header     JSON      configs, ontology, vocabularies, tensor directory
//! tensors    f64 LE    row-major, in directory order
//! checksum   32 bytes  SHA-256 of everything above
//! ```

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{ThresholdVector, TypeEmbeddingMatrix};
use crate::corpus::TypeOntology;
use crate::embeddings::{DocEmbeddingTable, WordEmbeddingTable};
use crate::encoders::{BiLstmEncoder, DocMlp};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Params};

const MAGIC: &[u8; 8] = b"ENTYPER\0";
pub const FORMAT_VERSION: u32 = 1;
const WORDS: &str = "embeddings.words";
const DOCS: &str = "documents.vectors";
const THRESHOLDS: &str = "thresholds";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    model_config: ModelConfig,
    ontology: Vec<String>,
    ontology_hash: String,
    word_tokens: Vec<String>,
    doc_ids: Vec<String>,
    tensors: Vec<TensorEntry>,
}

fn push_tensor(entries: &mut Vec<TensorEntry>, body: &mut Vec<u8>, name: &str, shape: Vec<usize>, data: &[f64]) {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    for v in data {
        body.extend_from_slice(&v.to_le_bytes());
    }
    entries.push(TensorEntry {
        name: name.to_owned(),
        shape,
    });
}

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut body = Vec::new();
    for t in model.params.tensors() {
        push_tensor(&mut entries, &mut body, &t.name, t.shape, t.data);
    }
    let words = model.words.vectors();
    push_tensor(&mut entries, &mut body, WORDS, words.shape().to_vec(), words.as_slice().expect("contiguous"));
    let docs = model.docs.to_matrix();
    push_tensor(&mut entries, &mut body, DOCS, docs.shape().to_vec(), docs.as_slice().expect("contiguous"));
    let r = model.thresholds.values();
    push_tensor(&mut entries, &mut body, THRESHOLDS, vec![r.len()], r);

    let header = Header {
        dtype: "f64-le".into(),
        model_config: model.config.clone(),
        ontology: model.ontology.paths().to_vec(),
        ontology_hash: model.ontology.hash(),
        word_tokens: model.words.tokens().to_vec(),
        doc_ids: model.docs.ids().to_vec(),
        tensors: entries,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + body.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model);
    crate::io::write_atomic(path, |w| w.write_all(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

/// Loads a checkpoint and checks that it was trained on `ontology`.
pub fn load_checkpoint_for(path: &Path, ontology: &TypeOntology) -> Result<Model> {
    let model = load_checkpoint(path)?;
    let (expected, found) = (model.ontology.hash(), ontology.hash());
    if expected != found {
        return Err(Error::OntologyMismatch { expected, found });
    }
    Ok(model)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 8 + 4 + 8 + 32 {
        return Err(Error::Checksum);
    }
    let (content, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(content).as_slice() != digest {
        return Err(Error::Checksum);
    }
    if &content[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(content[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(content[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= content.len())
        .ok_or_else(|| Error::Checkpoint("header length out of range".into()))?;
    let header: Header = serde_json::from_slice(&content[20..header_end])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.dtype != "f64-le" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", header.dtype)));
    }

    let mut tensors: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    let mut offset = header_end;
    for entry in header.tensors {
        let len: usize = entry.shape.iter().product();
        let end = offset + len * 8;
        if end > content.len() {
            return Err(Error::Checkpoint(format!("tensor {} runs past the end", entry.name)));
        }
        let data = content[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset = end;
        tensors.insert(entry.name, (entry.shape, data));
    }
    if offset != content.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }

    let ontology = TypeOntology::from_paths(&header.ontology)?;
    if ontology.hash() != header.ontology_hash {
        return Err(Error::OntologyMismatch {
            expected: header.ontology_hash,
            found: ontology.hash(),
        });
    }
    let mut take = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    };
    let matrix = |(shape, data): (Vec<usize>, Vec<f64>)| -> Result<Array2<f64>> {
        match shape[..] {
            [r, c] => Ok(Array2::from_shape_vec((r, c), data).expect("length checked")),
            _ => Err(Error::Checkpoint(format!("expected a matrix, got shape {shape:?}"))),
        }
    };

    let config = header.model_config;
    let mut words = WordEmbeddingTable::from_parts(header.word_tokens, matrix(take(WORDS)?)?)?;
    words.oov_policy = config.oov_policy;
    words.trainable = config.fine_tune_embeddings;
    let doc_matrix = matrix(take(DOCS)?)?;
    let docs = if header.doc_ids.is_empty() {
        DocEmbeddingTable::new()
    } else {
        DocEmbeddingTable::from_matrix(header.doc_ids, &doc_matrix)?
    };
    let thresholds = ThresholdVector::new(take(THRESHOLDS)?.1)?;

    let word_dim = words.dim();
    let hidden = config.hidden_per_direction;
    let mut params = Params {
        encoder: BiLstmEncoder::zeros(word_dim, hidden, config.layers),
        attention: Array2::zeros((2 * hidden, word_dim)),
        document: DocMlp::zeros(config.doc_dim, config.doc_hidden, config.doc_output),
        types: TypeEmbeddingMatrix(Array2::zeros((ontology.len(), word_dim + 2 * hidden + config.doc_output))),
    };
    let names: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    for ((name, shape), slot) in names.into_iter().zip(params.tensors_mut()) {
        let (stored_shape, data) = take(&name)?;
        if stored_shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {stored_shape:?}, expected {shape:?}"
            )));
        }
        slot.copy_from_slice(&data);
    }

    let model = Model {
        config,
        ontology,
        words,
        docs,
        params,
        thresholds,
    };
    model.check_shapes()?;
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok(model)
}

//! Paragraph vectors, distributed-memory variant (PV-DM), trained with
//! negative sampling. The input to the predictor is the mean of the
//! document vector and the context word vectors around a center word.

use std::collections::HashMap;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::docs::DocEmbeddingTable;
use crate::corpus::DocumentRecord;
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid, uniform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PvdmConfig {
    pub dim: usize,
    /// Context words on each side of the center word.
    pub context_size: usize,
    pub negative_samples: usize,
    pub min_count: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub infer_epochs: usize,
    pub seed: u64,
}

impl Default for PvdmConfig {
    fn default() -> Self {
        PvdmConfig {
            dim: 50,
            context_size: 5,
            negative_samples: 5,
            min_count: 2,
            epochs: 20,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            infer_epochs: 100,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PvdmModel {
    pub config: PvdmConfig,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<usize>,
    /// Context word vectors (`vocab × dim`).
    pub word_input: Array2<f64>,
    /// Output (prediction) vectors (`vocab × dim`).
    pub word_output: Array2<f64>,
    doc_ids: Vec<String>,
    doc_index: HashMap<String, usize>,
    pub doc_vectors: Array2<f64>,
    /// Mean negative-sampling loss per center word, one entry per epoch.
    pub loss_log: Vec<f64>,
}

struct Sampler {
    noise: WeightedIndex<f64>,
}

impl Sampler {
    fn new(counts: &[usize]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        Sampler {
            noise: WeightedIndex::new(weights).expect("nonempty vocabulary with positive counts"),
        }
    }
}

/// One gradient step for a single center word. Updates the output vectors
/// and returns the gradient with respect to the averaged input `h` along
/// with the step's loss.
fn center_step(
    word_output: &mut Array2<f64>,
    h: ArrayView1<f64>,
    target: usize,
    negatives: &[usize],
    lr: f64,
    update_output: bool,
) -> (Array1<f64>, f64) {
    let mut dh = Array1::zeros(h.len());
    let mut loss = 0.0;
    let targets = std::iter::once((target, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0)));
    for (word, label) in targets {
        let score = h.dot(&word_output.row(word));
        loss -= if label > 0.0 {
            log_sigmoid(score)
        } else {
            log_sigmoid(-score)
        };
        let g = sigmoid(score) - label;
        dh.scaled_add(g, &word_output.row(word));
        if update_output {
            word_output.row_mut(word).scaled_add(-lr * g, &h);
        }
    }
    (dh, loss)
}

fn context_ids(ids: &[usize], center: usize, size: usize) -> impl Iterator<Item = usize> + '_ {
    let lo = center.saturating_sub(size);
    let hi = (center + size + 1).min(ids.len());
    (lo..hi).filter(move |&j| j != center).map(move |j| ids[j])
}

fn sample_negatives<R: rand::Rng>(
    sampler: &Sampler,
    target: usize,
    k: usize,
    rng: &mut R,
    out: &mut Vec<usize>,
) {
    out.clear();
    for _ in 0..k {
        let n = sampler.noise.sample(rng);
        if n != target {
            out.push(n);
        }
    }
}

impl PvdmModel {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn doc_vector(&self, doc_id: &str) -> Option<ArrayView1<'_, f64>> {
        self.doc_index.get(doc_id).map(|&i| self.doc_vectors.row(i))
    }

    pub fn doc_table(&self) -> DocEmbeddingTable {
        DocEmbeddingTable::from_matrix(self.doc_ids.clone(), &self.doc_vectors)
            .expect("trained vectors are finite and ids unique")
    }

    fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .filter_map(|t| self.index.get(t).copied())
            .collect()
    }

    /// Infers a vector for an unseen document with the word matrices frozen.
    pub fn infer_doc_vector(&self, tokens: &[String]) -> Array1<f64> {
        let dim = self.dim();
        let ids = self.encode(tokens);
        if ids.is_empty() {
            if !tokens.is_empty() {
                warn!("all {} document tokens are out of vocabulary", tokens.len());
            }
            return Array1::zeros(dim);
        }
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        let sampler = Sampler::new(&self.counts);
        let mut doc: Array1<f64> = uniform(dim, 0.5 / dim as f64, &mut rng);
        let mut word_output = self.word_output.clone();
        let mut negatives = Vec::with_capacity(cfg.negative_samples);
        let total = (cfg.infer_epochs * ids.len()).max(1) as f64;
        let mut step = 0usize;
        for _ in 0..cfg.infer_epochs {
            for center in 0..ids.len() {
                let lr = decayed_lr(cfg, step as f64 / total);
                step += 1;
                let mut h = doc.clone();
                let mut count = 1.0;
                for w in context_ids(&ids, center, cfg.context_size) {
                    h += &self.word_input.row(w);
                    count += 1.0;
                }
                h /= count;
                sample_negatives(&sampler, ids[center], cfg.negative_samples, &mut rng, &mut negatives);
                let (dh, _) = center_step(&mut word_output, h.view(), ids[center], &negatives, lr, false);
                doc.scaled_add(-lr / count, &dh);
            }
        }
        doc
    }
}

fn decayed_lr(cfg: &PvdmConfig, progress: f64) -> f64 {
    let lr = cfg.learning_rate - (cfg.learning_rate - cfg.min_learning_rate) * progress;
    lr.max(cfg.min_learning_rate)
}

/// Trains PV-DM on a document store. Documents are visited in a seeded
/// shuffled order each epoch; the learning rate decays linearly.
pub fn train_pvdm(documents: &[DocumentRecord], config: &PvdmConfig) -> Result<PvdmModel> {
    if documents.is_empty() {
        return Err(Error::Empty("no documents to train PV-DM on".into()));
    }
    if config.dim == 0 {
        return Err(Error::Config("PV-DM dim must be positive".into()));
    }
    let mut frequency: HashMap<&str, usize> = HashMap::new();
    for doc in documents {
        for t in &doc.tokens {
            *frequency.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = frequency
        .into_iter()
        .filter(|&(_, c)| c >= config.min_count)
        .collect();
    if kept.is_empty() {
        return Err(Error::Empty(format!(
            "PV-DM vocabulary is empty after min_count {}",
            config.min_count
        )));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let vocab: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
    let counts: Vec<usize> = kept.iter().map(|&(_, c)| c).collect();
    let index: HashMap<String, usize> = vocab.iter().cloned().zip(0..).collect();

    let mut doc_ids = Vec::with_capacity(documents.len());
    let mut doc_index = HashMap::with_capacity(documents.len());
    for (i, d) in documents.iter().enumerate() {
        if doc_index.insert(d.doc_id.clone(), i).is_some() {
            return Err(Error::Config(format!("duplicate doc_id `{}`", d.doc_id)));
        }
        doc_ids.push(d.doc_id.clone());
    }

    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = 0.5 / dim as f64;
    let mut model = PvdmModel {
        config: config.clone(),
        word_input: uniform((vocab.len(), dim), init, &mut rng),
        word_output: Array2::zeros((vocab.len(), dim)),
        doc_vectors: uniform((documents.len(), dim), init, &mut rng),
        vocab,
        index,
        counts,
        doc_ids,
        doc_index,
        loss_log: Vec::new(),
    };
    let encoded: Vec<Vec<usize>> = documents.iter().map(|d| model.encode(&d.tokens)).collect();
    let sampler = Sampler::new(&model.counts);
    let total = (config.epochs * encoded.iter().map(Vec::len).sum::<usize>()).max(1) as f64;
    let mut order: Vec<usize> = (0..documents.len()).collect();
    let mut negatives = Vec::with_capacity(config.negative_samples);
    let mut step = 0usize;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut targets = 0usize;
        for &d in &order {
            let ids = &encoded[d];
            for center in 0..ids.len() {
                let lr = decayed_lr(config, step as f64 / total);
                step += 1;
                let mut h = model.doc_vectors.row(d).to_owned();
                let mut count = 1.0;
                for w in context_ids(ids, center, config.context_size) {
                    h += &model.word_input.row(w);
                    count += 1.0;
                }
                h /= count;
                sample_negatives(&sampler, ids[center], config.negative_samples, &mut rng, &mut negatives);
                let (dh, loss) =
                    center_step(&mut model.word_output, h.view(), ids[center], &negatives, lr, true);
                epoch_loss += loss;
                targets += 1;
                let scale = -lr / count;
                model.doc_vectors.row_mut(d).scaled_add(scale, &dh);
                for w in context_ids(ids, center, config.context_size) {
                    model.word_input.row_mut(w).scaled_add(scale, &dh);
                }
            }
        }
        model
            .loss_log
            .push(if targets > 0 { epoch_loss / targets as f64 } else { 0.0 });
    }
    Ok(model)
}

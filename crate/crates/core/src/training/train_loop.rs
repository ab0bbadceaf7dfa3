use std::fmt::Write as _;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, AdamConfig, AdamState};
use super::backprop::{forward_backward, Mode};
use crate::classifier::{predict_types, PredictionResult, ThresholdVector};
use crate::corpus::{Mention, TypeOntology, TypeSet};
use crate::embeddings::{DocEmbeddingTable, WordEmbeddingTable};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvaluationReport};
use crate::model::{init_model, Instance, Model, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a dev strict-F1 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 200,
            dropout_rate: 0.5,
            max_epochs: 30,
            patience: 5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: EvaluationReport,
}

pub const LOG_HEADER: &str = "epoch\ttrain_loss\tdev_strict\tdev_macro\tdev_micro";

/// Training log as TSV with a header line.
pub fn format_log(log: &[EpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for e in log {
        writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            e.epoch, e.train_loss, e.dev.strict.f1, e.dev.loose_macro.f1, e.dev.loose_micro.f1
        )
        .expect("write to string");
    }
    out
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev strict F1.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

pub fn prepare_all(model: &Model, mentions: &[Mention]) -> Result<Vec<Instance>> {
    mentions.iter().map(|m| model.prepare(m)).collect()
}

/// Probabilities for every mention, evaluation mode.
pub fn predict_probabilities(model: &Model, mentions: &[Mention]) -> Result<Vec<ndarray::Array1<f64>>> {
    mentions.par_iter().map(|m| model.probabilities(m)).collect()
}

pub fn predict_all(model: &Model, mentions: &[Mention], thresholds: &ThresholdVector) -> Result<Vec<PredictionResult>> {
    let probs = predict_probabilities(model, mentions)?;
    Ok(probs
        .iter()
        .map(|p| predict_types(p.view(), thresholds, model.config.fallback))
        .collect())
}

pub fn scoring_golds(mentions: &[Mention], num_types: usize) -> Vec<TypeSet> {
    mentions.iter().map(|m| m.scoring_gold(num_types)).collect()
}

pub fn evaluate_model(model: &Model, mentions: &[Mention], thresholds: &ThresholdVector) -> Result<EvaluationReport> {
    let preds: Vec<TypeSet> = predict_all(model, mentions, thresholds)?
        .into_iter()
        .map(|p| p.predicted)
        .collect();
    evaluate(&preds, &scoring_golds(mentions, model.num_types()))
}

/// Initializes a model from the seeded run generator and trains it.
pub fn train_loop(
    ontology: TypeOntology,
    words: WordEmbeddingTable,
    docs: DocEmbeddingTable,
    train: &[Mention],
    dev: &[Mention],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = init_model(ontology, words, docs, config.model.clone(), &mut rng)?;
    train_model(model, train, dev, config, &mut rng)
}

/// Mini-batch Adam training with dev strict-F1 model selection. Dev
/// scores use thresholds of 0.5.
pub fn train_model(
    mut model: Model,
    train: &[Mention],
    dev: &[Mention],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Empty("training needs nonempty train and dev splits".into()));
    }
    let train_instances = prepare_all(&model, train)?;
    let half = ThresholdVector::fixed(model.num_types(), 0.5)?;
    let mut adam = AdamState::new(model.trainable_tensors().iter().map(|t| t.data.len()));
    let mut order: Vec<usize> = (0..train_instances.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0usize;

    for epoch in 1..=config.max_epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Instance> = chunk.iter().map(|&i| train_instances[i].clone()).collect();
            let (loss, grads) = forward_backward(&model, &batch, Mode::Train, config.dropout_rate, rng)?;
            loss_sum += loss * batch.len() as f64;
            let grad_tensors = grads.tensors();
            let grad_slices: Vec<&[f64]> = grad_tensors.iter().map(|t| t.data).collect();
            adam_update(model.trainable_tensors_mut(), &grad_slices, &mut adam, &config.adam);
        }
        let dev_report = evaluate_model(&model, dev, &half)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train_instances.len() as f64,
            dev: dev_report,
        };
        info!(
            "epoch {epoch}: loss {:.4}, dev strict {:.4} macro {:.4} micro {:.4}",
            entry.train_loss, dev_report.strict.f1, dev_report.loose_macro.f1, dev_report.loose_micro.f1
        );
        log.push(entry);

        let improved = best.as_ref().is_none_or(|(score, _, _)| dev_report.strict.f1 > *score);
        if improved {
            best = Some((dev_report.strict.f1, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience {
            break;
        }
    }

    match best {
        Some((_, best_epoch, model)) => Ok(TrainOutcome { model, log, best_epoch }),
        None => Err(Error::Config("max_epochs must be at least 1".into())),
    }
}

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{Mention, Span, TypeOntology, TypeSet};
use crate::embeddings::{DocEmbeddingTable, WordEmbeddingTable};
use crate::math::uniform;
use crate::model::{init_model, DropoutMasks, Instance, Model, ModelConfig};

const VOCAB: &[&str] = &["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];

fn toy_config() -> ModelConfig {
    ModelConfig {
        hidden_per_direction: 8,
        layers: 2,
        doc_dim: 6,
        doc_hidden: 7,
        doc_output: 5,
        window: Some(10),
        fine_tune_embeddings: true,
        init_range: 0.5,
        ..ModelConfig::default()
    }
}

fn toy_model(seed: u64, config: ModelConfig) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ontology = TypeOntology::from_paths((0..5).map(|t| format!("/t{t}"))).unwrap();
    let words = WordEmbeddingTable::from_parts(
        VOCAB.iter().map(|s| s.to_string()).collect(),
        uniform((VOCAB.len(), 10), 1.0, &mut rng),
    )
    .unwrap();
    let mut docs = DocEmbeddingTable::new();
    for d in 0..3 {
        let v = uniform((6,), 1.0, &mut rng).to_vec();
        docs.insert(&format!("d{d}"), &v).unwrap();
    }
    init_model(ontology, words, docs, config, &mut rng).unwrap()
}

fn mention(tokens: &[&str], start: usize, end: usize, gold: &[usize], doc: usize) -> Mention {
    Mention {
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
        span: Span::new(start, end),
        gold: gold.iter().copied().collect::<TypeSet>(),
        unknown_types: vec![],
        doc_id: Some(format!("d{doc}")),
    }
}

fn toy_mentions() -> Vec<Mention> {
    vec![
        mention(&["alpha", "beta", "gamma", "delta"], 1, 3, &[0, 2], 0),
        mention(&["eps", "Zeta", "unknown", "eta", "theta"], 0, 1, &[1], 1),
        mention(&["theta", "gamma", "alpha"], 2, 3, &[3, 4], 2),
    ]
}

fn toy_batch(model: &Model) -> Vec<Instance> {
    prepare_all(model, &toy_mentions()).unwrap()
}

#[test]
fn finite_differences_agree() {
    for seed in 0..3 {
        let model = toy_model(seed, toy_config());
        let batch = toy_batch(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let report = grad_check(&model, &batch, 1e-5, 40, &mut rng).unwrap();
        assert!(report.passed(1e-4), "seed {seed}: {report:?}");
        assert!(report.per_tensor.iter().any(|(n, _)| n == "embeddings.words"));
    }
}

#[test]
fn finite_differences_flag_a_broken_tensor() {
    let model = toy_model(0, toy_config());
    let batch = toy_batch(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, mut grads) = forward_backward(&model, &batch, Mode::Eval, 0.0, &mut rng).unwrap();
    grads.params.attention.mapv_inplace(|g| -g);
    let report = grad_check_against(&model, &batch, &grads, 1e-5, 40, &mut rng).unwrap();
    assert_eq!(report.worst_parameter, "attention.W_a");
    assert!(!report.passed(1e-4));
}

#[test]
fn zero_model_loss_is_log_two_per_type() {
    let mut model = toy_model(0, toy_config());
    for t in model.params.tensors_mut() {
        t.fill(0.0);
    }
    let batch = toy_batch(&model);
    let loss = batch_loss(&model, &batch).unwrap();
    assert!((loss - 5.0 * std::f64::consts::LN_2).abs() < 1e-12);
    let p = model.forward(&batch[0], None).unwrap().probabilities;
    assert!(p.iter().all(|&v| v == 0.5));
}

#[test]
fn zero_dropout_matches_eval() {
    let model = toy_model(1, toy_config());
    let batch = toy_batch(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (train_loss, train_grads) = forward_backward(&model, &batch, Mode::Train, 0.0, &mut rng).unwrap();
    let (eval_loss, eval_grads) = forward_backward(&model, &batch, Mode::Eval, 0.5, &mut rng).unwrap();
    assert_eq!(train_loss, eval_loss);
    assert_eq!(train_grads.params, eval_grads.params);
    assert_eq!(eval_loss, batch_loss(&model, &batch).unwrap());
}

#[test]
fn eval_is_deterministic() {
    let model = toy_model(2, toy_config());
    let m = &toy_mentions()[1];
    assert_eq!(model.probabilities(m).unwrap(), model.probabilities(m).unwrap());
}

#[test]
fn dropout_preserves_expectation() {
    let model = toy_model(3, toy_config());
    let batch = toy_batch(&model);
    let clean = model.forward(&batch[0], None).unwrap().features;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let trials = 10_000;
    let mut sum = Array1::<f64>::zeros(clean.len());
    for _ in 0..trials {
        let masks = DropoutMasks::sample(&model, 0.5, &mut rng);
        sum += &model.forward(&batch[0], Some(&masks)).unwrap().features;
    }
    let mean = sum / trials as f64;
    let err: f64 = (&mean - &clean).mapv(f64::abs).sum() / clean.mapv(f64::abs).sum();
    assert!(err < 0.02, "relative L1 deviation {err}");
}

fn small_train_config() -> TrainConfig {
    TrainConfig {
        model: toy_config(),
        batch_size: 2,
        max_epochs: 8,
        patience: 3,
        seed: 11,
        adam: AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn run(config: &TrainConfig) -> TrainOutcome {
    let base = toy_model(0, config.model.clone());
    let mentions = toy_mentions();
    train_loop(base.ontology, base.words, base.docs, &mentions, &mentions, config).unwrap()
}

#[test]
fn patience_zero_runs_one_epoch() {
    let mut config = small_train_config();
    config.patience = 0;
    let out = run(&config);
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let config = small_train_config();
    let a = run(&config);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| run(&config));
    assert_eq!(format_log(&a.log), format_log(&b.log));
    assert_eq!(a.model.params, b.model.params);
    assert!(format_log(&a.log).starts_with(LOG_HEADER));
}

#[test]
fn training_reduces_loss() {
    let mut config = small_train_config();
    config.dropout_rate = 0.0;
    config.max_epochs = 40;
    config.patience = 40;
    let out = run(&config);
    let first = out.log.first().unwrap().train_loss;
    let last = out.log.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let model = toy_model(4, toy_config());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.params, model.params);
    assert_eq!(loaded.config, model.config);
    assert_eq!(loaded.ontology, model.ontology);
    assert_eq!(loaded.words.vectors(), model.words.vectors());
    assert_eq!(loaded.thresholds, model.thresholds);
    assert_eq!(checkpoint::checkpoint_bytes(&loaded), checkpoint::checkpoint_bytes(&model));
    let m = &toy_mentions()[0];
    assert_eq!(loaded.probabilities(m).unwrap(), model.probabilities(m).unwrap());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let model = toy_model(4, toy_config());
    let bytes = checkpoint::checkpoint_bytes(&model);
    let truncated = &bytes[..bytes.len() - 100];
    assert!(matches!(parse_checkpoint(truncated), Err(crate::Error::Checksum)));
    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(matches!(parse_checkpoint(&flipped), Err(crate::Error::Checksum)));
    assert!(matches!(parse_checkpoint(b"short"), Err(crate::Error::Checksum)));
}

#[test]
fn ontology_mismatch_is_reported() {
    let model = toy_model(4, toy_config());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let other = TypeOntology::from_paths(["/t0", "/t1"]).unwrap();
    assert!(matches!(
        load_checkpoint_for(&path, &other),
        Err(crate::Error::OntologyMismatch { .. })
    ));
    assert!(load_checkpoint_for(&path, &model.ontology).is_ok());
}

#[test]
fn train_config_rejects_bad_values() {
    let c = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(c.validate().is_err());
    let c = TrainConfig {
        dropout_rate: 1.0,
        ..TrainConfig::default()
    };
    assert!(c.validate().is_err());
    let parsed: TrainConfig = toml::from_str("batch_size = 16\n[model]\nlayers = 1\n").unwrap();
    assert_eq!(parsed.batch_size, 16);
    assert_eq!(parsed.model.layers, 1);
    assert!(toml::from_str::<TrainConfig>("bogus = 1\n").is_err());
}

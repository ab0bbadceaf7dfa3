//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::analysis::{attention_trace, render_html, similarity_tsv, type_similarity};
use crate::classifier::{predict_types, read_prediction_dump, write_prediction_dump, PredictionRecord, ThresholdVector};
use crate::corpus::{load_dataset, read_documents, read_mentions, DatasetPaths, LoadOptions, Mention, TypeOntology, TypePolicy, TypeSet};
use crate::embeddings::{load_doc_vectors, load_word_vectors, train_pvdm, DocEmbeddingTable, PvdmConfig};
use crate::metrics::{evaluate, EvaluationReport};
use crate::model::Model;
use crate::thresholds::{tune_thresholds, TuneConfig};
use crate::training::{
    format_log, load_checkpoint, predict_probabilities, save_checkpoint, scoring_golds, train_loop, TrainConfig,
};

/// Directory searched for relative input paths that do not exist as given.
pub const DATA_DIR_ENV: &str = "ENTYPER_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "entyper", version, about = "Fine-grained entity typing")]
pub struct Cli {
    /// Run on a single thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint and training log.
    Train(TrainArgs),
    /// Score a checkpoint on labelled mentions, or score a prediction dump.
    Evaluate(EvaluateArgs),
    /// Tune per-type thresholds on dev data and store them in the checkpoint.
    TuneThresholds(TuneArgs),
    /// Predict types for mentions.
    Predict(PredictArgs),
    /// Train document vectors and write them as text.
    EmbedDocs(EmbedArgs),
    /// Type-embedding neighbors or attention traces.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnknownTypes {
    /// Fail on dev/test labels missing from the training ontology.
    #[default]
    Reject,
    /// Keep them as labels that can never be predicted.
    Unscoreable,
}

impl From<UnknownTypes> for TypePolicy {
    fn from(u: UnknownTypes) -> Self {
        match u {
            UnknownTypes::Reject => TypePolicy::Reject,
            UnknownTypes::Unscoreable => TypePolicy::Unscoreable,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub docs: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    pub doc_vectors: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub train: TrainConfig,
    pub pvdm: PvdmConfig,
    pub tune: TuneConfig,
    /// Tune thresholds on dev after training.
    pub tune_thresholds: bool,
    pub unknown_types: UnknownTypes,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("config {}", path.display()))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training mentions (JSON lines).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Dev mentions, used for model selection.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Test mentions; their tokens are kept in the checkpoint's word table.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Document store (JSON lines); document vectors are trained from it
    /// unless --doc-vectors is given.
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Word vectors in text format.
    #[arg(long)]
    pub word_vectors: Option<PathBuf>,
    /// Precomputed document vectors in text format.
    #[arg(long)]
    pub doc_vectors: Option<PathBuf>,
    /// Checkpoint to write [default: model.ckpt].
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Training log TSV [default: <output>.log.tsv].
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Final dev evaluation JSON [default: stdout].
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Random seed for the run [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 30]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without dev improvement before stopping [default: 5].
    #[arg(long)]
    pub patience: Option<usize>,
    /// [default: 200]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam step size [default: 0.001].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// [default: 0.5]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// LSTM hidden size per direction [default: 100].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Stacked LSTM layers [default: 2].
    #[arg(long)]
    pub layers: Option<usize>,
    /// Context tokens kept on each side of the mention [default: 10].
    #[arg(long, conflicts_with = "full_sentence")]
    pub window: Option<usize>,
    /// Use the whole sentence as context.
    #[arg(long)]
    pub full_sentence: bool,
    /// Document vector size [default: 50].
    #[arg(long)]
    pub doc_dim: Option<usize>,
    /// Document MLP hidden size [default: 70].
    #[arg(long)]
    pub doc_hidden: Option<usize>,
    /// Document feature size [default: 50].
    #[arg(long)]
    pub doc_output: Option<usize>,
    /// Drop the document feature.
    #[arg(long)]
    pub no_doc_context: bool,
    /// Update word vectors during training.
    #[arg(long)]
    pub fine_tune: bool,
    /// Allow empty predictions instead of falling back to the top type.
    #[arg(long)]
    pub no_fallback: bool,
    /// Half-width of the uniform initialization [default: 0.01].
    #[arg(long)]
    pub init_range: Option<f64>,
    /// Epochs of document-vector training [default: 20].
    #[arg(long)]
    pub pvdm_epochs: Option<usize>,
    /// Tune thresholds on dev after training.
    #[arg(long)]
    pub tune_thresholds: bool,
    #[arg(long, value_enum)]
    pub unknown_types: Option<UnknownTypes>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ThresholdMode {
    Model,
    Fixed(f64),
}

fn parse_threshold_mode(s: &str) -> Result<ThresholdMode, String> {
    if s == "model" {
        return Ok(ThresholdMode::Model);
    }
    let value = s
        .strip_prefix("fixed:")
        .ok_or_else(|| format!("expected `model` or `fixed:<value>`, got `{s}`"))?;
    let v: f64 = value.parse().map_err(|_| format!("bad threshold `{value}`"))?;
    if !(v > 0.0 && v < 1.0) {
        return Err(format!("threshold {v} outside (0, 1)"));
    }
    Ok(ThresholdMode::Fixed(v))
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Labelled mentions to score.
    #[arg(long, required_unless_present = "predictions")]
    pub data: Option<PathBuf>,
    /// Score an existing prediction dump instead of running a model.
    #[arg(long, conflicts_with_all = ["checkpoint", "data", "dump"])]
    pub predictions: Option<PathBuf>,
    /// `model` or `fixed:<value>`.
    #[arg(long, default_value = "model", value_parser = parse_threshold_mode)]
    pub thresholds: ThresholdMode,
    /// Write one prediction record per mention.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Extra document vectors for documents missing from the checkpoint.
    #[arg(long)]
    pub doc_vectors: Option<PathBuf>,
    /// Ontology file that must match the checkpoint.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Report JSON [default: stdout].
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dev mentions.
    #[arg(long)]
    pub dev: PathBuf,
    /// Checkpoint to write [default: overwrite --checkpoint].
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also write `type-path threshold` lines.
    #[arg(long)]
    pub export: Option<PathBuf>,
    /// [default: 10]
    #[arg(long)]
    pub max_passes: Option<usize>,
    /// Only single-type moves.
    #[arg(long)]
    pub no_pair_escape: bool,
    #[arg(long)]
    pub doc_vectors: Option<PathBuf>,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Mentions; gold types are optional.
    #[arg(long)]
    pub input: PathBuf,
    /// Prediction JSON lines [default: stdout].
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub doc_vectors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Document store (JSON lines).
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    /// [default: 50]
    #[arg(long)]
    pub dim: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Context words on each side [default: 5].
    #[arg(long)]
    pub context_size: Option<usize>,
    /// [default: 5]
    #[arg(long)]
    pub negative: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Types,
    Attention,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub mode: AnalyzeMode,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Neighbors per type.
    #[arg(long, short, default_value_t = 10)]
    pub k: usize,
    /// Mentions to trace (attention mode).
    #[arg(long, required_if_eq("mode", "attention"))]
    pub input: Option<PathBuf>,
    /// TSV or JSON lines [default: stdout].
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also render attention traces as HTML.
    #[arg(long)]
    pub html: Option<PathBuf>,
    #[arg(long)]
    pub doc_vectors: Option<PathBuf>,
}

/// Resolves an input path, falling back to the data directory.
pub fn resolve_input(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

/// Writes to `path` atomically, or to stdout.
fn emit(path: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => crate::io::write_atomic(p, |w| w.write_all(content.as_bytes()))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::TuneThresholds(a) => cmd_tune(a),
        Command::Predict(a) => cmd_predict(a),
        Command::EmbedDocs(a) => cmd_embed(a),
        Command::Analyze(a) => cmd_analyze(a),
    }
}

fn merge_train_args(mut cfg: RunConfig, a: &TrainArgs) -> RunConfig {
    let p = &mut cfg.paths;
    for (slot, flag) in [
        (&mut p.train, &a.train),
        (&mut p.dev, &a.dev),
        (&mut p.test, &a.test),
        (&mut p.docs, &a.docs),
        (&mut p.word_vectors, &a.word_vectors),
        (&mut p.doc_vectors, &a.doc_vectors),
        (&mut p.output, &a.output),
        (&mut p.log, &a.log),
        (&mut p.report, &a.report),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    let t = &mut cfg.train;
    if let Some(v) = a.seed {
        t.seed = v;
        cfg.pvdm.seed = v;
    }
    if let Some(v) = a.max_epochs {
        t.max_epochs = v;
    }
    if let Some(v) = a.patience {
        t.patience = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        t.adam.learning_rate = v;
    }
    if let Some(v) = a.dropout {
        t.dropout_rate = v;
    }
    let m = &mut t.model;
    if let Some(v) = a.hidden {
        m.hidden_per_direction = v;
    }
    if let Some(v) = a.layers {
        m.layers = v;
    }
    if let Some(v) = a.window {
        m.window = Some(v);
    }
    if a.full_sentence {
        m.window = None;
    }
    if let Some(v) = a.doc_dim {
        m.doc_dim = v;
    }
    if let Some(v) = a.doc_hidden {
        m.doc_hidden = v;
    }
    if let Some(v) = a.doc_output {
        m.doc_output = v;
    }
    if a.no_doc_context {
        m.doc_context = false;
    }
    if a.fine_tune {
        m.fine_tune_embeddings = true;
    }
    if a.no_fallback {
        m.fallback = false;
    }
    if let Some(v) = a.init_range {
        m.init_range = v;
    }
    if let Some(v) = a.pvdm_epochs {
        cfg.pvdm.epochs = v;
    }
    if a.tune_thresholds {
        cfg.tune_thresholds = true;
    }
    if let Some(v) = a.unknown_types {
        cfg.unknown_types = v;
    }
    cfg
}

fn required(path: &Option<PathBuf>, flag: &str) -> anyhow::Result<PathBuf> {
    path.as_deref()
        .map(resolve_input)
        .ok_or_else(|| anyhow!("missing required input --{flag}"))
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let base = match &a.config {
        Some(p) => RunConfig::load(&resolve_input(p))?,
        None => RunConfig::default(),
    };
    let cfg = merge_train_args(base, &a);
    cfg.train.validate()?;
    let paths = DatasetPaths {
        train: required(&cfg.paths.train, "train")?,
        dev: required(&cfg.paths.dev, "dev")?,
        test: cfg.paths.test.as_deref().map(resolve_input),
        docs: cfg.paths.docs.as_deref().map(resolve_input),
    };
    let word_path = required(&cfg.paths.word_vectors, "word-vectors")?;
    let output = cfg.paths.output.clone().unwrap_or_else(|| PathBuf::from("model.ckpt"));
    let log_path = cfg.paths.log.clone().unwrap_or_else(|| {
        let mut s = output.clone().into_os_string();
        s.push(".log.tsv");
        PathBuf::from(s)
    });

    let data = load_dataset(
        &paths,
        LoadOptions {
            unknown_types: cfg.unknown_types.into(),
        },
    )?;
    let report = data.report();
    info!(
        "loaded {} train / {} dev / {} test mentions, {} types, {} documents",
        report.train, report.dev, report.test, report.types, report.documents
    );
    if !report.unknown_types.is_empty() {
        warn!("{} dev/test type(s) not in the training ontology", report.unknown_types.len());
    }
    let words = load_word_vectors(&word_path, None)?;
    let words = words.restrict_to(data.all_mentions().flat_map(|m| m.tokens.iter().map(String::as_str)));
    info!("kept {} word vectors of dimension {}", words.len(), words.dim());

    let model_cfg = &cfg.train.model;
    let docs = if let Some(p) = &cfg.paths.doc_vectors {
        load_doc_vectors(&resolve_input(p))?
    } else if model_cfg.doc_context && !data.documents.is_empty() {
        let mut records: Vec<_> = data.documents.values().cloned().collect();
        records.sort_by(|x, y| x.doc_id.cmp(&y.doc_id));
        let pvdm_cfg = PvdmConfig {
            dim: model_cfg.doc_dim,
            ..cfg.pvdm.clone()
        };
        info!("training document vectors on {} documents", records.len());
        train_pvdm(&records, &pvdm_cfg)?.doc_table()
    } else {
        if model_cfg.doc_context {
            warn!("no document vectors or document store; the document feature will be zero");
        }
        DocEmbeddingTable::new()
    };

    let outcome = train_loop(data.ontology.clone(), words, docs, &data.train, &data.dev, &cfg.train)?;
    let mut model = outcome.model;
    info!("best dev strict F1 at epoch {}", outcome.best_epoch);
    if cfg.tune_thresholds {
        let probs = predict_probabilities(&model, &data.dev)?;
        let golds = scoring_golds(&data.dev, model.num_types());
        let tuned = tune_thresholds(&probs, &golds, model.config.fallback, &cfg.tune)?;
        info!(
            "thresholds tuned: dev strict {:.4} -> {:.4}",
            tuned.dev_strict_before, tuned.dev_strict_after
        );
        model.thresholds = tuned.thresholds;
    }
    crate::io::write_atomic(&log_path, |w| w.write_all(format_log(&outcome.log).as_bytes()))?;
    save_checkpoint(&model, &output)?;
    let dev = score(&model, &data.dev, &model.thresholds)?.0;
    emit(cfg.paths.report.as_deref(), &to_json(&dev))
}

fn load_model(checkpoint: &Path, doc_vectors: Option<&Path>, ontology: Option<&Path>) -> anyhow::Result<Model> {
    let mut model = load_checkpoint(&resolve_input(checkpoint))?;
    if let Some(p) = ontology {
        let other = TypeOntology::load(&resolve_input(p))?;
        let (expected, found) = (model.ontology.hash(), other.hash());
        if expected != found {
            return Err(crate::Error::OntologyMismatch { expected, found }.into());
        }
    }
    if let Some(p) = doc_vectors {
        let extra = load_doc_vectors(&resolve_input(p))?;
        let mut added = 0;
        for id in extra.ids() {
            if model.docs.get(id)?.is_none() {
                let v = extra.get(id)?.expect("listed id").to_vec();
                model.docs.insert(id, &v)?;
                added += 1;
            }
        }
        info!("added {added} document vectors");
    }
    Ok(model)
}

fn read_eval_mentions(model: &Model, path: &Path, policy: TypePolicy) -> anyhow::Result<Vec<Mention>> {
    let mut ontology = model.ontology.clone();
    Ok(read_mentions(&resolve_input(path), &mut ontology, policy, false)?)
}

fn records(model: &Model, mentions: &[Mention], thresholds: &ThresholdVector) -> anyhow::Result<Vec<PredictionRecord>> {
    let probs = predict_probabilities(model, mentions)?;
    let path = |t: &usize| model.ontology.path(*t).expect("model type id").to_owned();
    Ok(probs
        .iter()
        .zip(mentions)
        .map(|(p, m)| {
            let pred = predict_types(p.view(), thresholds, model.config.fallback);
            let mut gold: Vec<String> = m.gold.iter().map(path).collect();
            gold.extend(m.unknown_types.iter().cloned());
            PredictionRecord {
                probabilities: p.to_vec(),
                predicted: pred.predicted.iter().map(path).collect(),
                gold,
            }
        })
        .collect())
}

fn score(model: &Model, mentions: &[Mention], thresholds: &ThresholdVector) -> anyhow::Result<(EvaluationReport, Vec<PredictionRecord>)> {
    if mentions.is_empty() {
        bail!("no mentions to evaluate");
    }
    let recs = records(model, mentions, thresholds)?;
    let probs: Vec<_> = recs.iter().map(|r| ndarray::Array1::from(r.probabilities.clone())).collect();
    let preds: Vec<TypeSet> = probs
        .iter()
        .map(|p| predict_types(p.view(), thresholds, model.config.fallback).predicted)
        .collect();
    let report = evaluate(&preds, &scoring_golds(mentions, model.num_types()))?;
    Ok((report, recs))
}

/// Scores a prediction dump by type path.
fn score_dump(path: &Path) -> anyhow::Result<EvaluationReport> {
    let recs = read_prediction_dump(&resolve_input(path))?;
    if recs.is_empty() {
        bail!("{}: no predictions", path.display());
    }
    let mut ids = std::collections::HashMap::new();
    let mut set = |paths: &[String]| -> TypeSet {
        paths
            .iter()
            .map(|p| {
                let next = ids.len();
                *ids.entry(p.clone()).or_insert(next)
            })
            .collect()
    };
    let (mut preds, mut golds) = (Vec::new(), Vec::new());
    for r in &recs {
        preds.push(set(&r.predicted));
        golds.push(set(&r.gold));
    }
    Ok(evaluate(&preds, &golds)?)
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    if let Some(p) = &a.predictions {
        if a.thresholds != ThresholdMode::Model {
            bail!("--thresholds cannot be combined with --predictions");
        }
        return emit(a.output.as_deref(), &to_json(&score_dump(p)?));
    }
    let checkpoint = a.checkpoint.as_deref().expect("required by clap");
    let data = a.data.as_deref().expect("required by clap");
    let model = load_model(checkpoint, a.doc_vectors.as_deref(), a.ontology.as_deref())?;
    let mentions = read_eval_mentions(&model, data, TypePolicy::Unscoreable)?;
    let thresholds = match a.thresholds {
        ThresholdMode::Model => model.thresholds.clone(),
        ThresholdMode::Fixed(v) => ThresholdVector::fixed(model.num_types(), v)?,
    };
    let (report, recs) = score(&model, &mentions, &thresholds)?;
    if let Some(dump) = &a.dump {
        write_prediction_dump(dump, &recs)?;
    }
    emit(a.output.as_deref(), &to_json(&report))
}

fn cmd_tune(a: TuneArgs) -> anyhow::Result<()> {
    let mut model = load_model(&a.checkpoint, a.doc_vectors.as_deref(), a.ontology.as_deref())?;
    let dev = read_eval_mentions(&model, &a.dev, TypePolicy::Unscoreable)?;
    if dev.is_empty() {
        bail!("{}: dev set is empty", a.dev.display());
    }
    let cfg = TuneConfig {
        max_passes: a.max_passes.unwrap_or(TuneConfig::default().max_passes),
        pair_escape: !a.no_pair_escape,
        ..TuneConfig::default()
    };
    let probs = predict_probabilities(&model, &dev)?;
    let golds = scoring_golds(&dev, model.num_types());
    let report = tune_thresholds(&probs, &golds, model.config.fallback, &cfg)?;
    model.thresholds = report.thresholds.clone();
    if let Some(p) = &a.export {
        let text = model.thresholds.to_text(&model.ontology);
        crate::io::write_atomic(p, |w| w.write_all(text.as_bytes()))?;
    }
    save_checkpoint(&model, a.output.as_deref().unwrap_or(&a.checkpoint))?;
    emit(None, &to_json(&report))
}

fn cmd_predict(a: PredictArgs) -> anyhow::Result<()> {
    let model = load_model(&a.checkpoint, a.doc_vectors.as_deref(), None)?;
    let mentions = read_eval_mentions(&model, &a.input, TypePolicy::Unscoreable)?;
    let recs = records(&model, &mentions, &model.thresholds)?;
    let mut out = String::new();
    for r in &recs {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    emit(a.output.as_deref(), &out)
}

fn cmd_embed(a: EmbedArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(&resolve_input(p))?.pvdm,
        None => PvdmConfig::default(),
    };
    for (slot, flag) in [
        (&mut cfg.dim, a.dim),
        (&mut cfg.epochs, a.epochs),
        (&mut cfg.min_count, a.min_count),
        (&mut cfg.context_size, a.context_size),
        (&mut cfg.negative_samples, a.negative),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let docs = read_documents(&resolve_input(&a.docs))?;
    if docs.is_empty() {
        bail!("{}: document store is empty", a.docs.display());
    }
    let mut records: Vec<_> = docs.into_values().collect();
    records.sort_by(|x, y| x.doc_id.cmp(&y.doc_id));
    let table = train_pvdm(&records, &cfg)?.doc_table();
    table.save(&a.output)?;
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> anyhow::Result<()> {
    let model = load_model(&a.checkpoint, a.doc_vectors.as_deref(), None)?;
    match a.mode {
        AnalyzeMode::Types => {
            let rows = type_similarity(&model.params.types, &model.ontology, a.k)?;
            emit(a.output.as_deref(), &similarity_tsv(&rows))
        }
        AnalyzeMode::Attention => {
            let input = a.input.as_deref().expect("required by clap");
            let mentions = read_eval_mentions(&model, input, TypePolicy::Unscoreable)?;
            let traces = mentions
                .iter()
                .map(|m| attention_trace(&model, m))
                .collect::<crate::Result<Vec<_>>>()?;
            let mut out = String::new();
            for t in &traces {
                out.push_str(&serde_json::to_string(t)?);
                out.push('\n');
            }
            if let Some(p) = &a.html {
                let html = render_html(&traces);
                crate::io::write_atomic(p, |w| w.write_all(html.as_bytes()))?;
            }
            emit(a.output.as_deref(), &out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_valid() {
        Cli::command().debug_assert();
    }

    #[test]
    fn threshold_modes() {
        assert_eq!(parse_threshold_mode("model"), Ok(ThresholdMode::Model));
        assert_eq!(parse_threshold_mode("fixed:0.5"), Ok(ThresholdMode::Fixed(0.5)));
        assert!(parse_threshold_mode("fixed:1.5").is_err());
        assert!(parse_threshold_mode("tuned").is_err());
    }

    #[test]
    fn config_defaults_and_overrides() {
        let cfg: RunConfig = toml::from_str(
            "tune_thresholds = true\n[paths]\ntrain = \"t.jsonl\"\n[train]\nmax_epochs = 3\n[train.model]\nhidden_per_direction = 4\n[pvdm]\nepochs = 2\n",
        )
        .unwrap();
        assert!(cfg.tune_thresholds);
        assert_eq!(cfg.train.model.hidden_per_direction, 4);
        assert_eq!(cfg.train.model.layers, 2);
        assert_eq!(cfg.train.batch_size, 200);
        assert_eq!(cfg.pvdm.dim, 50);

        let cli = Cli::try_parse_from(["entyper", "train", "--max-epochs", "7", "--hidden", "6", "--seed", "9"]).unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let merged = merge_train_args(cfg, &args);
        assert_eq!(merged.train.max_epochs, 7);
        assert_eq!(merged.train.model.hidden_per_direction, 6);
        assert_eq!((merged.train.seed, merged.pvdm.seed), (9, 9));
        assert_eq!(merged.paths.train, Some(PathBuf::from("t.jsonl")));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("learning_rat = 0.1\n").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nlearning_rate = 0.1\n").is_err());
        assert!(toml::from_str::<RunConfig>("[train.adam]\nlearning_rate = 0.1\n").is_ok());
    }

    #[test]
    fn bad_analyze_mode_is_a_usage_error() {
        let err = Cli::try_parse_from(["entyper", "analyze", "bogus", "--checkpoint", "m"]).unwrap_err();
        assert_eq!(err.kind(), clap::error::ErrorKind::InvalidValue);
    }
}

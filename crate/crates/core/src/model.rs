//! The full typing model: word and document tables, the featurizer
//! parameters, type embeddings and decision thresholds.

use log::warn;
use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict_types, type_probabilities, PredictionResult, ThresholdVector, TypeEmbeddingMatrix};
use crate::corpus::{context_window, LabelVector, Mention, Span, TypeOntology};
use crate::embeddings::{DocEmbeddingTable, OovPolicy, WordEmbeddingTable};
use crate::encoders::attention::{attention_backward, attention_weights, encode_sentence};
use crate::encoders::document::DocTrace;
use crate::encoders::lstm::BiLstmTrace;
use crate::encoders::{BiLstmEncoder, DocMlp, FeatureVector, LstmDirection};
use crate::error::{Error, Result};
use crate::math::{outer_add, uniform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// LSTM units per direction; context states are twice this size.
    pub hidden_per_direction: usize,
    pub layers: usize,
    pub doc_dim: usize,
    pub doc_hidden: usize,
    pub doc_output: usize,
    /// Context tokens kept on each side of the mention; `None` keeps the
    /// whole sentence.
    pub window: Option<usize>,
    pub doc_context: bool,
    pub fine_tune_embeddings: bool,
    /// Predict the argmax type when no probability clears its threshold.
    pub fallback: bool,
    pub init_range: f64,
    pub oov_policy: OovPolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_per_direction: 100,
            layers: 2,
            doc_dim: 50,
            doc_hidden: 70,
            doc_output: 50,
            window: Some(10),
            doc_context: true,
            fine_tune_embeddings: false,
            fallback: true,
            init_range: 0.01,
            oov_policy: OovPolicy::LowercaseThenZero,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_per_direction == 0 || self.layers == 0 {
            return Err(Error::Config("LSTM needs at least one layer and one unit".into()));
        }
        if self.doc_dim == 0 || self.doc_hidden == 0 || self.doc_output == 0 {
            return Err(Error::Config("document MLP sizes must be positive".into()));
        }
        if !(self.init_range > 0.0 && self.init_range.is_finite()) {
            return Err(Error::Config(format!("init_range {} must be > 0", self.init_range)));
        }
        Ok(())
    }
}

/// Trainable featurizer and classifier weights (word vectors excluded).
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub encoder: BiLstmEncoder,
    /// `W_a`: `2H × d_word`.
    pub attention: Array2<f64>,
    pub document: DocMlp,
    pub types: TypeEmbeddingMatrix,
}

/// A parameter tensor as stored in checkpoints and visited by Adam.
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are contiguous")
}

fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are contiguous")
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        Params {
            encoder: BiLstmEncoder::zeros(self.encoder.input_dim(), self.encoder.hidden(), self.encoder.layers.len()),
            attention: z(&self.attention),
            document: DocMlp {
                w_hidden: z(&self.document.w_hidden),
                w_output: z(&self.document.w_output),
            },
            types: TypeEmbeddingMatrix(z(&self.types.0)),
        }
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            for (dir, p) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                let prefix = format!("encoder.layer{l}.{dir}");
                out.push(NamedTensor {
                    name: format!("{prefix}.W_input"),
                    shape: p.w_input.shape().to_vec(),
                    data: slice2(&p.w_input),
                });
                out.push(NamedTensor {
                    name: format!("{prefix}.W_recurrent"),
                    shape: p.w_recurrent.shape().to_vec(),
                    data: slice2(&p.w_recurrent),
                });
                out.push(NamedTensor {
                    name: format!("{prefix}.bias"),
                    shape: vec![p.bias.len()],
                    data: p.bias.as_slice().expect("contiguous"),
                });
            }
        }
        for (name, a) in [
            ("attention.W_a", &self.attention),
            ("document.W_d2", &self.document.w_hidden),
            ("document.W_d1", &self.document.w_output),
            ("classifier.W", &self.types.0),
        ] {
            out.push(NamedTensor {
                name: name.to_owned(),
                shape: a.shape().to_vec(),
                data: slice2(a),
            });
        }
        out
    }

    /// Mutable views in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.encoder.layers {
            for p in [&mut layer.forward, &mut layer.backward] {
                let LstmDirection {
                    w_input,
                    w_recurrent,
                    bias,
                } = p;
                out.push(slice2_mut(w_input));
                out.push(slice2_mut(w_recurrent));
                out.push(bias.as_slice_mut().expect("contiguous"));
            }
        }
        out.push(slice2_mut(&mut self.attention));
        out.push(slice2_mut(&mut self.document.w_hidden));
        out.push(slice2_mut(&mut self.document.w_output));
        out.push(slice2_mut(&mut self.types.0));
        out
    }
}

pub const WORDS_TENSOR: &str = "embeddings.words";

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub ontology: TypeOntology,
    pub words: WordEmbeddingTable,
    pub docs: DocEmbeddingTable,
    pub params: Params,
    pub thresholds: ThresholdVector,
}

/// A mention resolved against the model's tables.
#[derive(Clone, Debug)]
pub struct Instance {
    /// Word-table row per context-window token (`None` = zero vector).
    pub rows: Vec<Option<usize>>,
    /// Mention span inside the window.
    pub span: Span,
    /// Document vector fed to the MLP (zeros without document context).
    pub document: Array1<f64>,
    pub labels: LabelVector,
}

/// Inverted-dropout masks for the three feature blocks.
#[derive(Clone, Debug)]
pub struct DropoutMasks {
    pub entity: Array1<f64>,
    pub sentence: Array1<f64>,
    pub document: Array1<f64>,
}

fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Array1<f64> {
    let keep = 1.0 - rate;
    Array1::from_shape_simple_fn(len, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(model: &Model, rate: f64, rng: &mut R) -> Self {
        DropoutMasks {
            entity: dropout_mask(model.word_dim(), rate, rng),
            sentence: dropout_mask(model.params.encoder.output_dim(), rate, rng),
            document: dropout_mask(model.config.doc_output, rate, rng),
        }
    }
}

/// Everything computed by one forward pass over an instance.
#[derive(Clone, Debug)]
pub struct Forward {
    pub inputs: Vec<Array1<f64>>,
    pub entity: Array1<f64>,
    pub lstm: BiLstmTrace,
    pub weights: Vec<f64>,
    pub sentence: Array1<f64>,
    pub doc: DocTrace,
    /// Classifier input after dropout.
    pub features: Array1<f64>,
    pub probabilities: Array1<f64>,
}

impl Forward {
    pub fn feature_vector(&self) -> FeatureVector {
        FeatureVector {
            entity: self.entity.clone(),
            sentence: self.sentence.clone(),
            document: self.doc.output.clone(),
        }
    }
}

/// Gradients for every trainable tensor.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Params,
    pub words: Option<Array2<f64>>,
}

impl Gradients {
    pub fn zeros(model: &Model) -> Self {
        Gradients {
            params: model.params.zeros_like(),
            words: model
                .config
                .fine_tune_embeddings
                .then(|| Array2::zeros(model.words.vectors().raw_dim())),
        }
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = self.params.tensors();
        if let Some(w) = &self.words {
            out.push(NamedTensor {
                name: WORDS_TENSOR.into(),
                shape: w.shape().to_vec(),
                data: slice2(w),
            });
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.params.tensors_mut();
        if let Some(w) = &mut self.words {
            out.push(slice2_mut(w));
        }
        out
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }
}

pub fn init_model(
    ontology: TypeOntology,
    mut words: WordEmbeddingTable,
    docs: DocEmbeddingTable,
    config: ModelConfig,
    rng: &mut impl Rng,
) -> Result<Model> {
    config.validate()?;
    if ontology.is_empty() {
        return Err(Error::Empty("type ontology".into()));
    }
    if let Ok(dim) = docs.dim() {
        if dim != config.doc_dim {
            return Err(Error::Shape(format!(
                "document vectors have {dim} dimensions, model expects {}",
                config.doc_dim
            )));
        }
    }
    words.oov_policy = config.oov_policy;
    words.trainable = config.fine_tune_embeddings;
    let word_dim = words.dim();
    let hidden = config.hidden_per_direction;
    let range = config.init_range;
    let encoder = BiLstmEncoder::build(word_dim, hidden, config.layers, |d, h| {
        LstmDirection::uniform(d, h, range, rng)
    });
    let attention = uniform((2 * hidden, word_dim), range, rng);
    let document = DocMlp::uniform(config.doc_dim, config.doc_hidden, config.doc_output, range, rng);
    let feature_dim = word_dim + 2 * hidden + config.doc_output;
    let types = TypeEmbeddingMatrix(uniform((ontology.len(), feature_dim), range, rng));
    let thresholds = ThresholdVector::fixed(ontology.len(), 0.5)?;
    Ok(Model {
        config,
        ontology,
        words,
        docs,
        params: Params {
            encoder,
            attention,
            document,
            types,
        },
        thresholds,
    })
}

impl Model {
    pub fn word_dim(&self) -> usize {
        self.words.dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.params.types.feature_dim()
    }

    pub fn num_types(&self) -> usize {
        self.ontology.len()
    }

    /// Checks that all tensor shapes agree with each other and the tables.
    pub fn check_shapes(&self) -> Result<()> {
        let p = &self.params;
        let d = self.word_dim();
        let h = p.encoder.hidden();
        let bad = |m: String| Err(Error::Shape(m));
        if p.encoder.input_dim() != d {
            return bad(format!("encoder input {} vs word dim {d}", p.encoder.input_dim()));
        }
        for (l, layer) in p.encoder.layers.iter().enumerate() {
            let d_in = if l == 0 { d } else { 2 * h };
            for dir in [&layer.forward, &layer.backward] {
                if dir.w_input.shape() != [4 * h, d_in]
                    || dir.w_recurrent.shape() != [4 * h, h]
                    || dir.bias.len() != 4 * h
                {
                    return bad(format!("LSTM layer {l} shapes"));
                }
            }
        }
        if p.attention.shape() != [2 * h, d] {
            return bad(format!("W_a is {:?}, expected [{}, {d}]", p.attention.shape(), 2 * h));
        }
        let c = &self.config;
        if p.document.w_hidden.shape() != [c.doc_hidden, c.doc_dim]
            || p.document.w_output.shape() != [c.doc_output, c.doc_hidden]
        {
            return bad("document MLP shapes".into());
        }
        if p.types.0.shape() != [self.ontology.len(), d + 2 * h + c.doc_output] {
            return bad(format!("classifier W is {:?}", p.types.0.shape()));
        }
        if self.thresholds.len() != self.ontology.len() {
            return bad("threshold vector length".into());
        }
        Ok(())
    }

    pub fn prepare(&self, mention: &Mention) -> Result<Instance> {
        let window = context_window(mention, self.config.window);
        let rows = window
            .tokens(mention)
            .iter()
            .map(|t| self.words.row_of(t))
            .collect();
        let mut document = Array1::zeros(self.config.doc_dim);
        if self.config.doc_context {
            if let Some(id) = &mention.doc_id {
                match self.docs.get(id).ok().flatten() {
                    Some(v) => document.assign(&v),
                    None => warn!("no document vector for `{id}`; using zeros"),
                }
            }
        }
        let labels = LabelVector::from_set(&mention.gold, self.num_types());
        Ok(Instance {
            rows,
            span: window.span,
            document,
            labels,
        })
    }

    fn word_vector(&self, row: Option<usize>) -> Array1<f64> {
        match row {
            Some(r) => self.words.row(r).to_owned(),
            None => Array1::zeros(self.word_dim()),
        }
    }

    /// The single forward path used for training, evaluation and analysis.
    pub fn forward(&self, inst: &Instance, masks: Option<&DropoutMasks>) -> Result<Forward> {
        let inputs: Vec<Array1<f64>> = inst.rows.iter().map(|&r| self.word_vector(r)).collect();
        let span_vectors: Vec<ArrayView1<f64>> = inputs[inst.span.range()].iter().map(|v| v.view()).collect();
        let entity = crate::encoders::encode_entity(&span_vectors)?;
        let lstm = self.params.encoder.forward(&inputs)?;
        let weights = attention_weights(&lstm.outputs, entity.view(), &self.params.attention)?;
        let sentence = encode_sentence(&lstm.outputs, &weights)?;
        let doc = self.params.document.forward(inst.document.view())?;

        let (d, s) = (entity.len(), sentence.len());
        let mut features = Array1::zeros(self.feature_dim());
        features.slice_mut(s![..d]).assign(&entity);
        features.slice_mut(s![d..d + s]).assign(&sentence);
        features.slice_mut(s![d + s..]).assign(&doc.output);
        if let Some(m) = masks {
            features.slice_mut(s![..d]).zip_mut_with(&m.entity, |x, k| *x *= k);
            features.slice_mut(s![d..d + s]).zip_mut_with(&m.sentence, |x, k| *x *= k);
            features.slice_mut(s![d + s..]).zip_mut_with(&m.document, |x, k| *x *= k);
        }
        let probabilities = type_probabilities(features.view(), &self.params.types)?;
        Ok(Forward {
            inputs,
            entity,
            lstm,
            weights,
            sentence,
            doc,
            features,
            probabilities,
        })
    }

    /// Backward pass for one instance, with `d_logits = scale · (p − y)`.
    pub fn backward(
        &self,
        inst: &Instance,
        fwd: &Forward,
        masks: Option<&DropoutMasks>,
        scale: f64,
        grads: &mut Gradients,
    ) {
        let p = &self.params;
        let d_logits: Array1<f64> = fwd
            .probabilities
            .iter()
            .zip(inst.labels.bits())
            .map(|(&prob, &y)| scale * (prob - if y { 1.0 } else { 0.0 }))
            .collect();
        outer_add(&mut grads.params.types.0, 1.0, d_logits.view(), fwd.features.view());
        let d_features = p.types.0.t().dot(&d_logits);

        let (d, s) = (fwd.entity.len(), fwd.sentence.len());
        let mut d_entity = d_features.slice(s![..d]).to_owned();
        let mut d_sentence = d_features.slice(s![d..d + s]).to_owned();
        let mut d_document = d_features.slice(s![d + s..]).to_owned();
        if let Some(m) = masks {
            d_entity *= &m.entity;
            d_sentence *= &m.sentence;
            d_document *= &m.document;
        }

        p.document.backward(&fwd.doc, d_document.view(), &mut grads.params.document);

        let (d_states, d_entity_att) = attention_backward(
            &fwd.lstm.outputs,
            fwd.entity.view(),
            &p.attention,
            &fwd.weights,
            d_sentence.view(),
            &mut grads.params.attention,
        );
        d_entity += &d_entity_att;
        let d_inputs = p.encoder.backward(&fwd.lstm, d_states, &mut grads.params.encoder);

        if let Some(dw) = &mut grads.words {
            for (pos, row) in inst.rows.iter().enumerate() {
                if let Some(r) = row {
                    dw.row_mut(*r).scaled_add(1.0, &d_inputs[pos]);
                }
            }
            let share = 1.0 / inst.span.len() as f64;
            for row in inst.rows[inst.span.range()].iter().flatten() {
                dw.row_mut(*row).scaled_add(share, &d_entity);
            }
        }
    }

    /// `φ(e, x)` in evaluation mode.
    pub fn featurize(&self, mention: &Mention) -> Result<FeatureVector> {
        let inst = self.prepare(mention)?;
        Ok(self.forward(&inst, None)?.feature_vector())
    }

    pub fn probabilities(&self, mention: &Mention) -> Result<Array1<f64>> {
        let inst = self.prepare(mention)?;
        Ok(self.forward(&inst, None)?.probabilities)
    }

    pub fn predict_with(&self, mention: &Mention, thresholds: &ThresholdVector) -> Result<PredictionResult> {
        let p = self.probabilities(mention)?;
        Ok(predict_types(p.view(), thresholds, self.config.fallback))
    }

    pub fn predict(&self, mention: &Mention) -> Result<PredictionResult> {
        self.predict_with(mention, &self.thresholds)
    }

    /// Trainable tensors in checkpoint/Adam order, words last if trainable.
    pub fn trainable_tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = self.params.tensors();
        if self.config.fine_tune_embeddings {
            out.push(NamedTensor {
                name: WORDS_TENSOR.into(),
                shape: self.words.vectors().shape().to_vec(),
                data: slice2(self.words.vectors()),
            });
        }
        out
    }

    pub fn trainable_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.params.tensors_mut();
        if self.config.fine_tune_embeddings {
            out.push(slice2_mut(self.words.vectors_mut()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TypeSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_words(dim: usize, tokens: &[&str], seed: u64) -> WordEmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = uniform((tokens.len(), dim), 1.0, &mut rng);
        WordEmbeddingTable::from_parts(tokens.iter().map(|s| s.to_string()).collect(), vectors).unwrap()
    }

    fn mention(tokens: &[&str], start: usize, end: usize) -> Mention {
        Mention {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            span: Span::new(start, end),
            gold: TypeSet::from([0]),
            unknown_types: vec![],
            doc_id: Some("d1".into()),
        }
    }

    fn default_model(types: usize, seed: u64) -> Model {
        let ontology = TypeOntology::from_paths((0..types).map(|t| format!("/t{t}"))).unwrap();
        let words = toy_words(300, &["the", "monopoly", "game", "is", "played"], 1);
        let mut docs = DocEmbeddingTable::new();
        docs.insert("d1", &vec![0.3; 50]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_model(ontology, words, docs, ModelConfig::default(), &mut rng).unwrap()
    }

    #[test]
    fn default_shapes() {
        let model = default_model(89, 7);
        model.check_shapes().unwrap();
        assert_eq!(model.params.types.num_types(), 89);
        assert_eq!(model.params.types.feature_dim(), 550);
        assert_eq!(model.params.attention.shape(), [200, 300]);
        assert_eq!(model.params.document.w_hidden.shape(), [70, 50]);
        assert_eq!(model.params.document.w_output.shape(), [50, 70]);
        assert!(model.thresholds.values().iter().all(|&r| r == 0.5));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = default_model(4, 7);
        let b = default_model(4, 7);
        assert_eq!(a.params, b.params);
        let c = default_model(4, 8);
        assert_ne!(a.params, c.params);
        for t in a.params.tensors() {
            assert!(t.data.iter().all(|v| v.abs() <= 0.01), "{}", t.name);
        }
    }

    #[test]
    fn featurize_dimensions() {
        let mut model = default_model(3, 1);
        let m = mention(&["Monopoly", "is", "played", "unknownword"], 0, 1);
        let f = model.featurize(&m).unwrap();
        assert_eq!(f.concat().len(), 550);
        assert!(f.is_finite());
        assert!(f.document.iter().any(|&v| v != 0.0));

        model.config.doc_context = false;
        let f = model.featurize(&m).unwrap();
        assert_eq!(f.dim(), 550);
        assert!(f.document.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mention_only_window() {
        let mut model = default_model(3, 1);
        model.config.window = Some(0);
        let m = mention(&["the", "game", "is", "played"], 1, 2);
        let inst = model.prepare(&m).unwrap();
        assert_eq!(inst.rows.len(), 1);
        let fwd = model.forward(&inst, None).unwrap();
        assert_eq!(fwd.weights, vec![1.0]);
        assert_eq!(fwd.sentence, fwd.lstm.outputs[0]);
    }

    #[test]
    fn empty_ontology_is_rejected() {
        let words = toy_words(4, &["a"], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let res = init_model(TypeOntology::new(), words, DocEmbeddingTable::new(), ModelConfig::default(), &mut rng);
        assert!(res.is_err());
    }
}

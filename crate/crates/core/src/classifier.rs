//! Multi-label logistic head: `P(y_t = 1) = σ(w_tᵀ φ)`, per-type binary
//! cross-entropy, and thresholded prediction.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelVector, TypeId, TypeOntology, TypeSet};
use crate::error::{Error, Result};
use crate::math::sigmoid;

/// Probability clamp used by [`nll_loss`].
pub const PROB_EPS: f64 = 1e-12;

/// Type embeddings, one row `w_t` per type.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeEmbeddingMatrix(pub Array2<f64>);

impl TypeEmbeddingMatrix {
    pub fn num_types(&self) -> usize {
        self.0.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn embedding(&self, t: TypeId) -> ArrayView1<'_, f64> {
        self.0.row(t)
    }
}

/// Per-type decision thresholds, each strictly inside (0, 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector(Vec<f64>);

impl ThresholdVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::Config(format!("threshold {bad} outside (0, 1)")));
        }
        Ok(ThresholdVector(values))
    }

    pub fn fixed(num_types: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; num_types])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `type-path threshold` lines.
    pub fn to_text(&self, ontology: &TypeOntology) -> String {
        let mut out = String::new();
        for (t, r) in self.0.iter().enumerate() {
            out.push_str(ontology.path(t).unwrap_or("?"));
            out.push(' ');
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}

pub fn type_probabilities(features: ArrayView1<f64>, types: &TypeEmbeddingMatrix) -> Result<Array1<f64>> {
    if features.len() != types.feature_dim() {
        return Err(Error::Shape(format!(
            "feature vector has {} values, type embeddings have {}",
            features.len(),
            types.feature_dim()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature vector".into()));
    }
    Ok(types.0.dot(&features).mapv(sigmoid))
}

/// `−Σ_t [y_t ln p_t + (1 − y_t) ln(1 − p_t)]` with `p` clamped to
/// `[ε, 1 − ε]`.
pub fn nll_loss(probabilities: ArrayView1<f64>, labels: &LabelVector) -> f64 {
    assert_eq!(probabilities.len(), labels.len(), "probabilities vs labels");
    probabilities
        .iter()
        .zip(labels.bits())
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionResult {
    pub probabilities: Array1<f64>,
    pub predicted: TypeSet,
    pub fallback_used: bool,
}

/// `T̂ = {t : p_t ≥ r_t}`; with `fallback`, an empty set becomes the
/// argmax type (lowest id on ties).
pub fn predict_types(probabilities: ArrayView1<f64>, thresholds: &ThresholdVector, fallback: bool) -> PredictionResult {
    assert_eq!(probabilities.len(), thresholds.len(), "probabilities vs thresholds");
    let mut predicted: TypeSet = probabilities
        .iter()
        .zip(thresholds.values())
        .enumerate()
        .filter_map(|(t, (&p, &r))| (p >= r).then_some(t))
        .collect();
    let mut fallback_used = false;
    if predicted.is_empty() && fallback {
        if let Some(best) = argmax(probabilities) {
            predicted.insert(best);
            fallback_used = true;
        }
    }
    PredictionResult {
        probabilities: probabilities.to_owned(),
        predicted,
        fallback_used,
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: ArrayView1<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// One line of a prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub probabilities: Vec<f64>,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
}

pub fn write_prediction_dump(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    crate::io::write_atomic(path, |w| {
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn read_prediction_dump(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

//! Entity-aligned dot-product attention over the context states.
//!
//! `score_i = h_iᵀ W_a f(e)`, `a = softmax(score)`, `g_s = Σ a_i h_i`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::math::{outer_add, softmax};

/// Attention scores `h_iᵀ W_a f_e`.
pub fn attention_scores(
    states: &[Array1<f64>],
    entity: ArrayView1<f64>,
    w_a: &Array2<f64>,
) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::Empty("attention over an empty sequence".into()));
    }
    if w_a.ncols() != entity.len() || states.iter().any(|h| h.len() != w_a.nrows()) {
        return Err(Error::Shape(format!(
            "W_a is {}×{}, states have {} values, entity has {}",
            w_a.nrows(),
            w_a.ncols(),
            states[0].len(),
            entity.len()
        )));
    }
    let query = w_a.dot(&entity);
    Ok(states.iter().map(|h| h.dot(&query)).collect())
}

pub fn attention_weights(
    states: &[Array1<f64>],
    entity: ArrayView1<f64>,
    w_a: &Array2<f64>,
) -> Result<Vec<f64>> {
    Ok(softmax(&attention_scores(states, entity, w_a)?))
}

/// Weighted sum of hidden states.
pub fn encode_sentence(states: &[Array1<f64>], weights: &[f64]) -> Result<Array1<f64>> {
    if states.len() != weights.len() || states.is_empty() {
        return Err(Error::Shape(format!(
            "{} states but {} attention weights",
            states.len(),
            weights.len()
        )));
    }
    let mut out = Array1::zeros(states[0].len());
    for (h, &a) in states.iter().zip(weights) {
        out.scaled_add(a, h);
    }
    Ok(out)
}

/// Gradients of attention + weighted sum. Accumulates into `d_w_a` and
/// returns `(d_states, d_entity)`.
pub fn attention_backward(
    states: &[Array1<f64>],
    entity: ArrayView1<f64>,
    w_a: &Array2<f64>,
    weights: &[f64],
    d_sentence: ArrayView1<f64>,
    d_w_a: &mut Array2<f64>,
) -> (Vec<Array1<f64>>, Array1<f64>) {
    let query = w_a.dot(&entity);
    let d_weights: Vec<f64> = states.iter().map(|h| h.dot(&d_sentence)).collect();
    let mean: f64 = weights.iter().zip(&d_weights).map(|(a, d)| a * d).sum();
    let mut d_query = Array1::zeros(query.len());
    let mut d_states = Vec::with_capacity(states.len());
    for ((h, &a), &da) in states.iter().zip(weights).zip(&d_weights) {
        let d_score = a * (da - mean);
        d_query.scaled_add(d_score, h);
        let mut dh = d_sentence.to_owned() * a;
        dh.scaled_add(d_score, &query);
        d_states.push(dh);
    }
    outer_add(d_w_a, 1.0, d_query.view(), entity);
    (d_states, w_a.t().dot(&d_query))
}

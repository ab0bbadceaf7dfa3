//! Inspection reports: nearest types by cosine of their embeddings, and the
//! per-token attention weights behind a prediction.

use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::classifier::TypeEmbeddingMatrix;
use crate::corpus::{context_window, Mention, Span, TypeOntology};
use crate::error::{Error, Result};
use crate::math::cosine;
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    #[serde(rename = "type")]
    pub type_path: String,
    /// Most similar first.
    pub neighbors: Vec<(String, f64)>,
}

/// The `k` most similar other types for every type. A type with a zero
/// embedding gets no neighbors.
pub fn type_similarity(w: &TypeEmbeddingMatrix, ontology: &TypeOntology, k: usize) -> Result<Vec<SimilarityRow>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if w.num_types() != ontology.len() {
        return Err(Error::Shape(format!(
            "{} type embeddings for {} types",
            w.num_types(),
            ontology.len()
        )));
    }
    let n = w.num_types();
    let mut rows = Vec::with_capacity(n);
    for a in 0..n {
        let path = ontology.path(a).expect("id in range").to_owned();
        let wa = w.embedding(a);
        if wa.iter().all(|&v| v == 0.0) {
            warn!("type {path} has a zero embedding; no neighbors reported");
            rows.push(SimilarityRow {
                type_path: path,
                neighbors: vec![],
            });
            continue;
        }
        let mut scored: Vec<(usize, f64)> = (0..n)
            .filter(|&b| b != a)
            .filter_map(|b| cosine(wa, w.embedding(b)).map(|c| (b, c)))
            .collect();
        scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        scored.truncate(k);
        rows.push(SimilarityRow {
            type_path: path,
            neighbors: scored
                .into_iter()
                .map(|(b, c)| (ontology.path(b).expect("id in range").to_owned(), c))
                .collect(),
        });
    }
    Ok(rows)
}

/// `type<TAB>neighbor<TAB>cosine` lines under a header.
pub fn similarity_tsv(rows: &[SimilarityRow]) -> String {
    let mut out = String::from("type\tneighbor\tcosine\n");
    for row in rows {
        for (neighbor, c) in &row.neighbors {
            writeln!(out, "{}\t{}\t{:.6}", row.type_path, neighbor, c).expect("write to string");
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// Tokens of the context window.
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
    /// Mention span within `tokens`.
    pub span: Span,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
}

/// Attention weights from an evaluation-mode forward pass, with the
/// model's prediction at its current thresholds.
pub fn attention_trace(model: &Model, mention: &Mention) -> Result<AttentionTrace> {
    let window = context_window(mention, model.config.window);
    let inst = model.prepare(mention)?;
    let fwd = model.forward(&inst, None)?;
    let predicted = crate::classifier::predict_types(fwd.probabilities.view(), &model.thresholds, model.config.fallback);
    let paths = |ids: &mut dyn Iterator<Item = usize>| -> Vec<String> {
        ids.filter_map(|t| model.ontology.path(t).map(str::to_owned)).collect()
    };
    let mut gold = paths(&mut mention.gold.iter().copied());
    gold.extend(mention.unknown_types.iter().cloned());
    Ok(AttentionTrace {
        tokens: window.tokens(mention).to_vec(),
        weights: fwd.weights,
        span: window.span,
        predicted: paths(&mut predicted.predicted.into_iter()),
        gold,
    })
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Static page with one line per trace. Each token's background opacity
/// is its weight scaled by the largest weight in the line; the mention is
/// underlined.
pub fn render_html(traces: &[AttentionTrace]) -> String {
    let mut out = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Attention</title>\n<style>\
         body{font-family:sans-serif}p{line-height:2}span.t{padding:2px 3px}span.m{text-decoration:underline}\
         </style></head><body>\n",
    );
    for trace in traces {
        let top = trace.weights.iter().cloned().fold(0.0, f64::max);
        out.push_str("<p>");
        for (i, (tok, w)) in trace.tokens.iter().zip(&trace.weights).enumerate() {
            let alpha = if top > 0.0 { w / top } else { 0.0 };
            let class = if trace.span.range().contains(&i) { "t m" } else { "t" };
            write!(
                out,
                "<span class=\"{class}\" style=\"background:rgba(0,0,0,{alpha:.3});color:{}\" title=\"{w:.4}\">{}</span> ",
                if alpha > 0.5 { "#fff" } else { "#000" },
                escape_html(tok)
            )
            .expect("write to string");
        }
        writeln!(
            out,
            "<br><small>predicted: {} | gold: {}</small></p>",
            escape_html(&trace.predicted.join(", ")),
            escape_html(&trace.gold.join(", "))
        )
        .expect("write to string");
    }
    out.push_str("</body></html>\n");
    out
}

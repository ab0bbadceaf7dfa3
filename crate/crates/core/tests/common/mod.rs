//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use entyper::corpus::{mention_to_record, DocumentRecord, Mention, Span, TypeOntology, TypeSet};
use entyper::embeddings::WordEmbeddingTable;
use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Corpus {
    pub ontology: TypeOntology,
    pub train: Vec<Mention>,
    pub dev: Vec<Mention>,
    pub docs: Vec<DocumentRecord>,
    pub words: WordEmbeddingTable,
}

fn random_words(tokens: Vec<String>, dim: usize, rng: &mut ChaCha8Rng) -> WordEmbeddingTable {
    let vectors = Array2::from_shape_fn((tokens.len(), dim), |_| rng.random_range(-1.0..1.0));
    WordEmbeddingTable::from_parts(tokens, vectors).unwrap()
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Five types; the last token of the mention decides the label set, the
/// rest of the sentence is random filler.
pub fn head_token_corpus(n: usize, word_dim: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ontology =
        TypeOntology::from_paths(["/person", "/person/artist", "/organization", "/location", "/location/city"]).unwrap();
    let groups: [&[usize]; 5] = [&[0], &[0, 1], &[2], &[3], &[3, 4]];
    let filler: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    let heads: Vec<Vec<String>> = (0..5).map(|g| (0..3).map(|j| format!("h{g}_{j}")).collect()).collect();

    let mut mentions = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % 5;
        let len = rng.random_range(5..10);
        let mut tokens: Vec<String> = (0..len).map(|_| filler.choose(&mut rng).unwrap().clone()).collect();
        let span_len = rng.random_range(1..=2);
        let end = rng.random_range(span_len..=len);
        tokens[end - 1] = heads[g].choose(&mut rng).unwrap().clone();
        mentions.push(Mention {
            tokens,
            span: Span::new(end - span_len, end),
            gold: groups[g].iter().copied().collect::<TypeSet>(),
            unknown_types: vec![],
            doc_id: None,
        });
    }
    let vocab: Vec<String> = filler.iter().chain(heads.iter().flatten()).cloned().collect();
    Corpus {
        ontology,
        train: mentions.clone(),
        dev: mentions,
        docs: vec![],
        words: random_words(vocab, word_dim, &mut rng),
    }
}

/// Two types that share every sentence template and mention token; only
/// the vocabulary of the linked document tells them apart.
pub fn document_corpus(train_n: usize, dev_n: usize, word_dim: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ontology = TypeOntology::from_paths(["/sports_team", "/political_party"]).unwrap();
    let topic: [Vec<String>; 2] = [
        (0..40).map(|i| format!("s{i}")).collect(),
        (0..40).map(|i| format!("p{i}")).collect(),
    ];
    let shared: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
    let docs_per_class = 20;
    let mut docs = Vec::new();
    for class in 0..2 {
        for d in 0..docs_per_class {
            let tokens = (0..120)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        shared.choose(&mut rng).unwrap().clone()
                    } else {
                        topic[class].choose(&mut rng).unwrap().clone()
                    }
                })
                .collect();
            docs.push(DocumentRecord {
                doc_id: format!("doc{class}_{d}"),
                tokens,
            });
        }
    }
    let names: Vec<String> = (0..12).map(|i| format!("n{i}")).collect();
    let templates: [&[&str]; 3] = [
        &["yesterday", "@", "announced", "a", "new", "plan"],
        &["the", "@", "said", "it", "would", "win"],
        &["fans", "of", "@", "gathered", "in", "town"],
    ];
    let make = |count: usize, rng: &mut ChaCha8Rng| -> Vec<Mention> {
        (0..count)
            .map(|i| {
                let class = i % 2;
                let template = templates.choose(rng).unwrap();
                let at = template.iter().position(|t| *t == "@").unwrap();
                let mut tokens = strings(template);
                tokens[at] = names.choose(rng).unwrap().clone();
                Mention {
                    tokens,
                    span: Span::new(at, at + 1),
                    gold: TypeSet::from([class]),
                    unknown_types: vec![],
                    doc_id: Some(format!("doc{class}_{}", rng.random_range(0..docs_per_class))),
                }
            })
            .collect()
    };
    let train = make(train_n, &mut rng);
    let dev = make(dev_n, &mut rng);
    let mut vocab: Vec<String> = names.clone();
    for t in templates {
        for w in t.iter().filter(|w| **w != "@") {
            if !vocab.iter().any(|v| v == w) {
                vocab.push(w.to_string());
            }
        }
    }
    Corpus {
        ontology,
        train,
        dev,
        docs,
        words: random_words(vocab, word_dim, &mut rng),
    }
}

pub struct Files {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub docs: PathBuf,
    pub words: PathBuf,
}

pub fn write_mentions(path: &Path, mentions: &[Mention], ontology: &TypeOntology) {
    let mut out = String::new();
    for m in mentions {
        out.push_str(&mention_to_record(m, ontology));
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

pub fn write_words(path: &Path, words: &WordEmbeddingTable) {
    let mut out = String::new();
    for (tok, row) in words.tokens().iter().zip(words.vectors().rows()) {
        out.push_str(tok);
        for v in row {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

pub fn write_docs(path: &Path, docs: &[DocumentRecord]) {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).unwrap());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Files {
    let files = Files {
        train: dir.join("train.jsonl"),
        dev: dir.join("dev.jsonl"),
        docs: dir.join("docs.jsonl"),
        words: dir.join("words.txt"),
    };
    write_mentions(&files.train, &corpus.train, &corpus.ontology);
    write_mentions(&files.dev, &corpus.dev, &corpus.ontology);
    write_docs(&files.docs, &corpus.docs);
    write_words(&files.words, &corpus.words);
    files
}

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What `lookup` returns for a token that is not in the table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    Zero,
    #[default]
    LowercaseThenZero,
}

/// Pretrained word vectors (GloVe text format), one row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
    pub oov_policy: OovPolicy,
    pub trainable: bool,
}

impl WordEmbeddingTable {
    pub fn from_parts(tokens: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if tokens.len() != vectors.nrows() {
            return Err(Error::Shape(format!(
                "{} tokens but {} vectors",
                tokens.len(),
                vectors.nrows()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Shape(format!("duplicate token `{t}`")));
            }
        }
        Ok(WordEmbeddingTable {
            tokens,
            index,
            vectors,
            oov_policy: OovPolicy::default(),
            trainable: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut Array2<f64> {
        &mut self.vectors
    }

    pub fn into_parts(self) -> (Vec<String>, Array2<f64>) {
        (self.tokens, self.vectors)
    }

    /// Row used for `token` under the OOV policy, if any.
    pub fn row_of(&self, token: &str) -> Option<usize> {
        if let Some(&row) = self.index.get(token) {
            return Some(row);
        }
        match self.oov_policy {
            OovPolicy::Zero => None,
            OovPolicy::LowercaseThenZero => self.index.get(&token.to_lowercase()).copied(),
        }
    }

    pub fn row(&self, row: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(row)
    }

    /// Total lookup: stored vector, lowercase fallback, or zeros.
    pub fn lookup(&self, token: &str) -> Array1<f64> {
        match self.row_of(token) {
            Some(row) => self.vectors.row(row).to_owned(),
            None => Array1::zeros(self.dim()),
        }
    }

    /// Copy of the table keeping only the given tokens and their lowercase
    /// forms. Keeps lookups of those tokens unchanged while shrinking a
    /// large pretrained vocabulary to what a corpus needs.
    pub fn restrict_to<'a, I>(&self, tokens: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut keep = vec![false; self.len()];
        for token in tokens {
            if let Some(&row) = self.index.get(token) {
                keep[row] = true;
            }
            if let Some(&row) = self.index.get(&token.to_lowercase()) {
                keep[row] = true;
            }
        }
        let rows: Vec<usize> = (0..self.len()).filter(|&r| keep[r]).collect();
        let tokens = rows.iter().map(|&r| self.tokens[r].clone()).collect();
        let vectors = self.vectors.select(ndarray::Axis(0), &rows);
        let mut table = Self::from_parts(tokens, vectors).expect("rows come from a valid table");
        table.oov_policy = self.oov_policy;
        table.trainable = self.trainable;
        table
    }
}

/// Splits a `name f1 … fd` line. Returns `None` for the name when the line
/// is blank. Names containing spaces are accepted when `dim` is known and
/// the extra leading fields are not numeric.
pub(crate) fn split_vector_line(
    line: &str,
    line_no: usize,
    dim: Option<usize>,
) -> Result<Option<(String, Vec<f64>)>> {
    let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
    if fields.is_empty() {
        return Ok(None);
    }
    let err = |message: String| Error::VectorFormat {
        line: line_no,
        message,
    };
    let name_len = match dim {
        None => 1,
        Some(d) if fields.len() == d + 1 => 1,
        Some(d) if fields.len() > d + 1 && fields[1].parse::<f64>().is_err() => fields.len() - d,
        Some(d) => {
            return Err(err(format!(
                "expected {d} values, found {}",
                fields.len() - 1
            )))
        }
    };
    if fields.len() <= name_len {
        return Err(err("no vector values".into()));
    }
    let values = fields[name_len..]
        .iter()
        .map(|f| {
            let v: f64 = f
                .parse()
                .map_err(|_| err(format!("non-numeric value `{f}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("non-finite value `{f}`")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Some((fields[..name_len].join(" "), values)))
}

pub fn read_word_vectors<R: BufRead>(
    reader: R,
    expected_dim: Option<usize>,
) -> Result<WordEmbeddingTable> {
    let mut dim = expected_dim;
    let mut tokens = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut data = Vec::new();
    let mut duplicates = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::VectorFormat {
            line: i + 1,
            message: e.to_string(),
        })?;
        let Some((token, values)) = split_vector_line(line.trim_end(), i + 1, dim)? else {
            continue;
        };
        dim.get_or_insert(values.len());
        if index.contains_key(&token) {
            duplicates += 1;
            continue;
        }
        index.insert(token.clone(), tokens.len());
        tokens.push(token);
        data.extend(values);
    }
    let Some(dim) = dim.filter(|_| !tokens.is_empty()) else {
        return Err(Error::Empty("word vector file has no vectors".into()));
    };
    if duplicates > 0 {
        warn!("{duplicates} duplicate token(s) in word vectors; first occurrence kept");
    }
    let vectors = Array2::from_shape_vec((tokens.len(), dim), data).expect("rows have dim values");
    WordEmbeddingTable::from_parts(tokens, vectors)
}

pub fn load_word_vectors(path: &Path, expected_dim: Option<usize>) -> Result<WordEmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_word_vectors(BufReader::new(file), expected_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, dim: Option<usize>) -> Result<WordEmbeddingTable> {
        read_word_vectors(text.as_bytes(), dim)
    }

    #[test]
    fn reads_glove_lines() {
        let table = read("the 0.1 0.2 0.3\nmonopoly 1 2 3\n", None).unwrap();
        assert_eq!(table.dim(), 3);
        assert_eq!(table.lookup("the").to_vec(), vec![0.1, 0.2, 0.3]);
        assert_eq!(table.len(), 2);
    }

    #[test]
    fn oov_policies() {
        let mut table = read("the 0.1 0.2 0.3\nmonopoly 1 2 3\n", None).unwrap();
        assert_eq!(table.lookup("Monopoly").to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(table.lookup("absent").to_vec(), vec![0.0; 3]);
        table.oov_policy = OovPolicy::Zero;
        assert_eq!(table.lookup("Monopoly").to_vec(), vec![0.0; 3]);
    }

    #[test]
    fn short_line_names_its_number() {
        let mut text = String::from("a");
        text.push_str(&" 0.5".repeat(300));
        text.push_str("\nb");
        text.push_str(&" 0.5".repeat(299));
        text.push('\n');
        let err = read(&text, None).unwrap_err();
        assert!(matches!(err, Error::VectorFormat { line: 2, .. }), "{err}");
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(read("", None), Err(Error::Empty(_))));
        assert!(read("a 1 x\n", None).is_err());
        assert!(read("a 1 2\n", Some(3)).is_err());
        assert!(read("a 1 2\nb 1 2 3\n", None).is_err());
        assert!(read("a NaN 2\n", None).is_err());
    }

    #[test]
    fn duplicates_keep_first() {
        let table = read("a 1 1\na 2 2\n", None).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.lookup("a").to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn multi_word_tokens() {
        let table = read("a 1 1\n. . . 2 2\n", None).unwrap();
        assert_eq!(table.lookup(". . .").to_vec(), vec![2.0, 2.0]);
    }

    #[test]
    fn restriction_preserves_lookups() {
        let table = read("the 1 0\nparis 0 1\nberlin 1 1\n", None).unwrap();
        let small = table.restrict_to(["Paris", "the", "nowhere"]);
        assert_eq!(small.len(), 2);
        for t in ["Paris", "the", "nowhere"] {
            assert_eq!(small.lookup(t), table.lookup(t));
        }
        assert_eq!(small.lookup("berlin").to_vec(), vec![0.0, 0.0]);
    }
}

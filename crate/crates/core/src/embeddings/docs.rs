use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use super::words::split_vector_line;
use crate::error::{Error, Result};

/// Document-level vectors keyed by doc id. The dimension is fixed by the
/// first inserted vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DocEmbeddingTable {
    dim: Option<usize>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl DocEmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dim(dim: usize) -> Self {
        DocEmbeddingTable {
            dim: Some(dim),
            ..Self::default()
        }
    }

    pub fn dim(&self) -> Result<usize> {
        self.dim
            .ok_or_else(|| Error::Empty("document vector table has no vectors".into()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn insert(&mut self, id: &str, vector: &[f64]) -> Result<()> {
        let dim = *self.dim.get_or_insert(vector.len());
        if vector.len() != dim {
            return Err(Error::Shape(format!(
                "document `{id}` has {} values, table dim is {dim}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("document vector `{id}`")));
        }
        if self.index.contains_key(id) {
            return Err(Error::Shape(format!("duplicate doc_id `{id}`")));
        }
        self.index.insert(id.to_owned(), self.ids.len());
        self.ids.push(id.to_owned());
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<Option<ArrayView1<'_, f64>>> {
        let dim = self.dim()?;
        Ok(self
            .index
            .get(id)
            .map(|&i| ArrayView1::from(&self.data[i * dim..(i + 1) * dim])))
    }

    /// Vectors as a `len × dim` matrix (row order = `ids()`).
    pub fn to_matrix(&self) -> Array2<f64> {
        let dim = self.dim.unwrap_or(0);
        Array2::from_shape_vec((self.len(), dim), self.data.clone()).expect("consistent table")
    }

    pub fn from_matrix(ids: Vec<String>, matrix: &Array2<f64>) -> Result<Self> {
        let mut table = Self::with_dim(matrix.ncols());
        for (id, row) in ids.iter().zip(matrix.rows()) {
            table.insert(id, &row.to_vec())?;
        }
        if table.len() != matrix.nrows() {
            return Err(Error::Shape("doc ids and matrix rows differ".into()));
        }
        Ok(table)
    }

    pub fn write_text(&self, w: &mut dyn std::io::Write) -> std::io::Result<()> {
        let dim = self.dim.unwrap_or(0);
        for (i, id) in self.ids.iter().enumerate() {
            w.write_all(id.as_bytes())?;
            for v in &self.data[i * dim..(i + 1) * dim] {
                write!(w, " {v}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| self.write_text(w))
    }
}

pub fn read_doc_vectors<R: BufRead>(reader: R) -> Result<DocEmbeddingTable> {
    let mut table = DocEmbeddingTable::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::VectorFormat {
            line: i + 1,
            message: e.to_string(),
        })?;
        // Doc ids never contain spaces, so the id is always the first field.
        let dim = table.dim.map(|d| d + 1);
        let Some((id, values)) = split_vector_line(line.trim_end(), i + 1, None)? else {
            continue;
        };
        if let Some(expected) = dim {
            if values.len() + 1 != expected {
                return Err(Error::VectorFormat {
                    line: i + 1,
                    message: format!("expected {} values, found {}", expected - 1, values.len()),
                });
            }
        }
        table.insert(&id, &values).map_err(|e| Error::VectorFormat {
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    Ok(table)
}

pub fn load_doc_vectors(path: &Path) -> Result<DocEmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_doc_vectors(BufReader::new(file))
}

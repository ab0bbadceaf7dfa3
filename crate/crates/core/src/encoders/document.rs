//! Document-context MLP: `g_d = relu(W_d1 · tanh(W_d2 · v))`.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{outer_add, uniform};

#[derive(Clone, Debug, PartialEq)]
pub struct DocMlp {
    /// `W_d2`, applied first: `hidden × doc_dim` (70×50 by default).
    pub w_hidden: Array2<f64>,
    /// `W_d1`, applied second: `out × hidden` (50×70 by default).
    pub w_output: Array2<f64>,
}

/// Intermediate values for the backward pass.
#[derive(Clone, Debug)]
pub struct DocTrace {
    input: Array1<f64>,
    hidden: Array1<f64>,
    pre_relu: Array1<f64>,
    pub output: Array1<f64>,
}

impl DocMlp {
    pub fn zeros(doc_dim: usize, hidden: usize, out: usize) -> Self {
        DocMlp {
            w_hidden: Array2::zeros((hidden, doc_dim)),
            w_output: Array2::zeros((out, hidden)),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(doc_dim: usize, hidden: usize, out: usize, range: f64, rng: &mut R) -> Self {
        DocMlp {
            w_hidden: uniform((hidden, doc_dim), range, rng),
            w_output: uniform((out, hidden), range, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_hidden.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_output.nrows()
    }

    pub fn forward(&self, doc: ArrayView1<f64>) -> Result<DocTrace> {
        if doc.len() != self.input_dim() || self.w_output.ncols() != self.w_hidden.nrows() {
            return Err(Error::Shape(format!(
                "document MLP expects {} inputs, got {}",
                self.input_dim(),
                doc.len()
            )));
        }
        let hidden = self.w_hidden.dot(&doc).mapv(f64::tanh);
        let pre_relu = self.w_output.dot(&hidden);
        let output = pre_relu.mapv(|z| z.max(0.0));
        Ok(DocTrace {
            input: doc.to_owned(),
            hidden,
            pre_relu,
            output,
        })
    }

    pub fn encode(&self, doc: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(doc)?.output)
    }

    /// Accumulates parameter gradients; the document vector itself is fixed.
    pub fn backward(&self, trace: &DocTrace, d_output: ArrayView1<f64>, grads: &mut DocMlp) {
        let d_pre = ndarray::Zip::from(&d_output)
            .and(&trace.pre_relu)
            .map_collect(|&d, &z| if z > 0.0 { d } else { 0.0 });
        outer_add(&mut grads.w_output, 1.0, d_pre.view(), trace.hidden.view());
        let d_hidden = self.w_output.t().dot(&d_pre) * trace.hidden.mapv(|t| 1.0 - t * t);
        outer_add(&mut grads.w_hidden, 1.0, d_hidden.view(), trace.input.view());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_document_gives_zero_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = DocMlp::uniform(50, 70, 50, 0.5, &mut rng);
        let g = mlp.encode(Array1::zeros(50).view()).unwrap();
        assert_eq!(g, Array1::<f64>::zeros(50));
    }

    #[test]
    fn relu_clamps_negative_rows() {
        let mut mlp = DocMlp::zeros(2, 2, 2);
        mlp.w_hidden = Array2::eye(2);
        mlp.w_output = ndarray::array![[1.0, 1.0], [-1.0, -1.0]];
        let g = mlp.encode(ndarray::array![0.5, 0.5].view()).unwrap();
        assert!(g[0] > 0.0);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = DocMlp::uniform(6, 7, 5, 0.9, &mut rng);
        let v: Array1<f64> = uniform(6, 1.0, &mut rng);
        let g = mlp.encode(v.view()).unwrap();
        let mut hidden = [0.0; 7];
        for (r, h) in hidden.iter_mut().enumerate() {
            let mut s = 0.0;
            for c in 0..6 {
                s += mlp.w_hidden[[r, c]] * v[c];
            }
            *h = s.tanh();
        }
        for r in 0..5 {
            let mut s = 0.0;
            for (c, h) in hidden.iter().enumerate() {
                s += mlp.w_output[[r, c]] * h;
            }
            assert_abs_diff_eq!(g[r], s.max(0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_length() {
        let mlp = DocMlp::zeros(50, 70, 50);
        assert!(mlp.encode(Array1::zeros(49).view()).is_err());
    }
}

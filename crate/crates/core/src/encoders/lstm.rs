//! Stacked bi-directional LSTM with hand-written backpropagation through time.
//!
//! Gate rows of every weight matrix are laid out as `[input, forget, cell,
//! output]`, each block `H` rows tall.

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{outer_add, sigmoid, uniform};

/// Parameters of one LSTM direction in one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmDirection {
    /// `4H × d_in`
    pub w_input: Array2<f64>,
    /// `4H × H`
    pub w_recurrent: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

/// Everything one step needs for its backward pass.
#[derive(Clone, Debug)]
pub struct StepCache {
    x: Array1<f64>,
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    i: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    o: Array1<f64>,
    tanh_c: Array1<f64>,
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmDirection {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmDirection {
            w_input: Array2::zeros((4 * hidden, input_dim)),
            w_recurrent: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(input_dim: usize, hidden: usize, range: f64, rng: &mut R) -> Self {
        LstmDirection {
            w_input: uniform((4 * hidden, input_dim), range, rng),
            w_recurrent: uniform((4 * hidden, hidden), range, rng),
            bias: uniform(4 * hidden, range, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.ncols()
    }

    fn check(&self, x: usize, h: usize, c: usize) -> Result<()> {
        let hd = self.hidden();
        if x != self.input_dim() || h != hd || c != hd {
            return Err(Error::Shape(format!(
                "lstm cell expects x:{} h:{hd} c:{hd}, got x:{x} h:{h} c:{c}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// One LSTM step: `(h, c) -> (h', c')`.
    pub fn cell(
        &self,
        x: ArrayView1<f64>,
        h: ArrayView1<f64>,
        c: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        self.check(x.len(), h.len(), c.len())?;
        let step = self.step(x, h, c);
        Ok((step.h, step.c))
    }

    fn step(&self, x: ArrayView1<f64>, h_prev: ArrayView1<f64>, c_prev: ArrayView1<f64>) -> StepCache {
        let hd = self.hidden();
        let z = self.w_input.dot(&x) + self.w_recurrent.dot(&h_prev) + &self.bias;
        let i = z.slice(s![0..hd]).mapv(sigmoid);
        let f = z.slice(s![hd..2 * hd]).mapv(sigmoid);
        let g = z.slice(s![2 * hd..3 * hd]).mapv(f64::tanh);
        let o = z.slice(s![3 * hd..4 * hd]).mapv(sigmoid);
        let c = &f * &c_prev + &i * &g;
        let tanh_c = c.mapv(f64::tanh);
        let h = &o * &tanh_c;
        StepCache {
            x: x.to_owned(),
            h_prev: h_prev.to_owned(),
            c_prev: c_prev.to_owned(),
            i,
            f,
            g,
            o,
            tanh_c,
            h,
            c,
        }
    }

    /// Runs over `inputs` from zero initial state, right-to-left when
    /// `reverse`. Caches are returned in position order.
    pub fn run(&self, inputs: &[Array1<f64>], reverse: bool) -> Vec<StepCache> {
        let hd = self.hidden();
        let n = inputs.len();
        let mut caches: Vec<Option<StepCache>> = vec![None; n];
        let mut h = Array1::zeros(hd);
        let mut c = Array1::zeros(hd);
        for k in 0..n {
            let pos = if reverse { n - 1 - k } else { k };
            let step = self.step(inputs[pos].view(), h.view(), c.view());
            h = step.h.clone();
            c = step.c.clone();
            caches[pos] = Some(step);
        }
        caches.into_iter().map(|c| c.expect("every position visited")).collect()
    }

    /// Backpropagation through time. `d_outputs[pos]` is the loss gradient
    /// with respect to the hidden state emitted at `pos`. Parameter
    /// gradients are accumulated into `grads`; input gradients are returned
    /// in position order.
    pub fn backward(
        &self,
        caches: &[StepCache],
        d_outputs: &[Array1<f64>],
        reverse: bool,
        grads: &mut LstmDirection,
    ) -> Vec<Array1<f64>> {
        let hd = self.hidden();
        let n = caches.len();
        let mut d_inputs = vec![Array1::zeros(self.input_dim()); n];
        let mut dh_next: Array1<f64> = Array1::zeros(hd);
        let mut dc_next: Array1<f64> = Array1::zeros(hd);
        for k in (0..n).rev() {
            let pos = if reverse { n - 1 - k } else { k };
            let st = &caches[pos];
            let dh = &d_outputs[pos] + &dh_next;
            let d_o = &dh * &st.tanh_c;
            let dc = &dc_next + &(&dh * &st.o * &st.tanh_c.mapv(|t| 1.0 - t * t));
            let d_i = &dc * &st.g;
            let d_g = &dc * &st.i;
            let d_f = &dc * &st.c_prev;
            dc_next = &dc * &st.f;

            let mut dz = Array1::zeros(4 * hd);
            dz.slice_mut(s![0..hd]).assign(&(&d_i * &st.i.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![hd..2 * hd]).assign(&(&d_f * &st.f.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![2 * hd..3 * hd]).assign(&(&d_g * &st.g.mapv(|v| 1.0 - v * v)));
            dz.slice_mut(s![3 * hd..4 * hd]).assign(&(&d_o * &st.o.mapv(|v| v * (1.0 - v))));

            outer_add(&mut grads.w_input, 1.0, dz.view(), st.x.view());
            outer_add(&mut grads.w_recurrent, 1.0, dz.view(), st.h_prev.view());
            grads.bias += &dz;
            d_inputs[pos] = self.w_input.t().dot(&dz);
            dh_next = self.w_recurrent.t().dot(&dz);
        }
        d_inputs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmLayer {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

/// `L` stacked bi-directional layers; layer `ℓ+1` reads the concatenated
/// `[→h; ←h]` outputs of layer `ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmEncoder {
    pub layers: Vec<BiLstmLayer>,
}

/// Forward activations of every layer, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BiLstmTrace {
    layers: Vec<(Vec<StepCache>, Vec<StepCache>)>,
    /// Top-layer states `h_i = [→h_i; ←h_i]`.
    pub outputs: Vec<Array1<f64>>,
}

fn concat(a: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() + b.len());
    out.slice_mut(s![..a.len()]).assign(a);
    out.slice_mut(s![a.len()..]).assign(b);
    out
}

impl BiLstmEncoder {
    pub fn build(
        input_dim: usize,
        hidden: usize,
        layers: usize,
        mut make: impl FnMut(usize, usize) -> LstmDirection,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let d_in = if l == 0 { input_dim } else { 2 * hidden };
                BiLstmLayer {
                    forward: make(d_in, hidden),
                    backward: make(d_in, hidden),
                }
            })
            .collect();
        BiLstmEncoder { layers }
    }

    pub fn zeros(input_dim: usize, hidden: usize, layers: usize) -> Self {
        Self::build(input_dim, hidden, layers, LstmDirection::zeros)
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].forward.hidden()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].forward.input_dim()
    }

    pub fn forward(&self, inputs: &[Array1<f64>]) -> Result<BiLstmTrace> {
        if inputs.is_empty() {
            return Err(Error::Empty("bi-LSTM input sequence".into()));
        }
        if let Some(x) = inputs.iter().find(|x| x.len() != self.input_dim()) {
            return Err(Error::Shape(format!(
                "bi-LSTM input has {} values, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut current: Vec<Array1<f64>> = inputs.to_vec();
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let fwd = layer.forward.run(&current, false);
            let bwd = layer.backward.run(&current, true);
            current = fwd.iter().zip(&bwd).map(|(f, b)| concat(&f.h, &b.h)).collect();
            layers.push((fwd, bwd));
        }
        Ok(BiLstmTrace {
            layers,
            outputs: current,
        })
    }

    /// Returns gradients with respect to the first layer's inputs.
    pub fn backward(
        &self,
        trace: &BiLstmTrace,
        d_outputs: Vec<Array1<f64>>,
        grads: &mut BiLstmEncoder,
    ) -> Vec<Array1<f64>> {
        let hd = self.hidden();
        let mut d_current = d_outputs;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (fwd, bwd) = &trace.layers[l];
            let d_fwd: Vec<Array1<f64>> = d_current.iter().map(|d| d.slice(s![..hd]).to_owned()).collect();
            let d_bwd: Vec<Array1<f64>> = d_current.iter().map(|d| d.slice(s![hd..]).to_owned()).collect();
            let g = &mut grads.layers[l];
            let from_fwd = layer.forward.backward(fwd, &d_fwd, false, &mut g.forward);
            let from_bwd = layer.backward.backward(bwd, &d_bwd, true, &mut g.backward);
            d_current = from_fwd.into_iter().zip(from_bwd).map(|(a, b)| a + b).collect();
        }
        d_current
    }
}

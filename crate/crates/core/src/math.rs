//! Small numeric helpers shared by the encoders, classifier and PV-DM.

use ndarray::{Array, Array1, ArrayView1, Dimension, ShapeBuilder};
use rand::Rng;

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Softmax with max-subtraction.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cosine similarity; `None` if either vector has zero norm.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Array with i.i.d. entries from U(-range, range).
pub fn uniform<Sh, D, R>(shape: Sh, range: f64, rng: &mut R) -> Array<f64, D>
where
    Sh: ShapeBuilder<Dim = D>,
    D: Dimension,
    R: Rng + ?Sized,
{
    Array::from_shape_simple_fn(shape, || rng.random_range(-range..=range))
}

pub fn outer_add(target: &mut ndarray::Array2<f64>, scale: f64, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in target.rows_mut().into_iter().zip(a.iter()) {
        let s = scale * ai;
        if s != 0.0 {
            row.scaled_add(s, &b);
        }
    }
}

pub fn is_finite(v: &Array1<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_abs_diff_eq!(sigmoid(3f64.ln()), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(sigmoid(-(3f64.ln())), 0.25, epsilon = 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert_abs_diff_eq!(log_sigmoid(2.0), sigmoid(2.0).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(log_sigmoid(-2.0), sigmoid(-2.0).ln(), epsilon = 1e-15);
        assert!(log_sigmoid(-800.0).is_finite());
    }

    #[test]
    fn softmax_hand_values() {
        let a = softmax(&[0.0, 3f64.ln()]);
        assert_abs_diff_eq!(a[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], 0.75, epsilon = 1e-15);
        assert_eq!(softmax(&[4.2]), vec![1.0]);
    }
}

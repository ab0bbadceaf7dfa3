//! Central finite-difference check of the analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::backprop::{batch_loss, forward_backward, Mode};
use crate::error::Result;
use crate::model::{Gradients, Instance, Model};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_parameter: String,
    /// Flat index, analytic and numeric gradient of the worst coordinate.
    pub worst_coordinate: (usize, f64, f64),
    /// Largest relative error per tensor, in tensor order.
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares evaluation-mode gradients with central differences on up to
/// `samples` random coordinates of every trainable tensor.
pub fn grad_check(
    model: &Model,
    batch: &[Instance],
    step: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    let (_, analytic) = forward_backward(model, batch, Mode::Eval, 0.0, rng)?;
    grad_check_against(model, batch, &analytic, step, samples, rng)
}

/// As [`grad_check`], with caller-supplied analytic gradients.
pub fn grad_check_against(
    model: &Model,
    batch: &[Instance],
    analytic: &Gradients,
    step: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    let mut probe = model.clone();
    let tensors = analytic.tensors();
    let mut per_tensor = Vec::with_capacity(tensors.len());
    let mut checked = 0;
    let mut worst_overall = (-1.0f64, (0usize, 0.0f64, 0.0f64));
    for (k, tensor) in tensors.iter().enumerate() {
        let n = tensor.data.len();
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            sample(rng, n, samples).into_vec()
        };
        let mut worst = 0.0f64;
        for i in coords {
            let original = probe.trainable_tensors_mut()[k][i];
            probe.trainable_tensors_mut()[k][i] = original + step;
            let plus = batch_loss(&probe, batch)?;
            probe.trainable_tensors_mut()[k][i] = original - step;
            let minus = batch_loss(&probe, batch)?;
            probe.trainable_tensors_mut()[k][i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(tensor.data[i], numeric);
            worst = worst.max(err);
            if err > worst_overall.0 {
                worst_overall = (err, (i, tensor.data[i], numeric));
            }
            checked += 1;
        }
        per_tensor.push((tensor.name.clone(), worst));
    }
    let (worst_parameter, max_rel_error) = per_tensor
        .iter()
        .fold((String::new(), 0.0f64), |(name, best), (n, e)| {
            if *e > best || name.is_empty() {
                (n.clone(), *e)
            } else {
                (name, best)
            }
        });
    Ok(GradCheckReport {
        max_rel_error,
        worst_parameter,
        worst_coordinate: worst_overall.1,
        per_tensor,
        checked,
    })
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classifier::nll_loss;
use crate::error::Result;
use crate::model::{DropoutMasks, Gradients, Instance, Model};

/// Instances per accumulation chunk. Chunks are summed in index order, so
/// results do not depend on the number of worker threads.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Mean loss over the batch and its gradient for every trainable tensor.
/// In train mode each instance gets its own dropout masks, drawn from a
/// seed taken from `rng` in batch order.
pub fn forward_backward(
    model: &Model,
    batch: &[Instance],
    mode: Mode,
    dropout_rate: f64,
    rng: &mut impl Rng,
) -> Result<(f64, Gradients)> {
    assert!(!batch.is_empty(), "empty batch");
    let seeds: Vec<Option<u64>> = batch
        .iter()
        .map(|_| (mode == Mode::Train && dropout_rate > 0.0).then(|| rng.random()))
        .collect();
    let scale = 1.0 / batch.len() as f64;

    let partials: Vec<Result<(f64, Gradients)>> = batch
        .par_chunks(CHUNK)
        .zip(seeds.par_chunks(CHUNK))
        .map(|(instances, seeds)| {
            let mut grads = Gradients::zeros(model);
            let mut loss = 0.0;
            for (inst, seed) in instances.iter().zip(seeds) {
                let masks = seed.map(|s| {
                    let mut r = ChaCha8Rng::seed_from_u64(s);
                    DropoutMasks::sample(model, dropout_rate, &mut r)
                });
                let fwd = model.forward(inst, masks.as_ref())?;
                loss += nll_loss(fwd.probabilities.view(), &inst.labels);
                model.backward(inst, &fwd, masks.as_ref(), scale, &mut grads);
            }
            Ok((loss, grads))
        })
        .collect();

    let mut total = 0.0;
    let mut grads: Option<Gradients> = None;
    for partial in partials {
        let (loss, g) = partial?;
        total += loss;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => acc.add_assign(&g),
        }
    }
    Ok((total * scale, grads.expect("nonempty batch")))
}

/// Mean evaluation-mode loss without gradients.
pub fn batch_loss(model: &Model, batch: &[Instance]) -> Result<f64> {
    let losses: Vec<Result<f64>> = batch
        .par_iter()
        .map(|inst| Ok(nll_loss(model.forward(inst, None)?.probabilities.view(), &inst.labels)))
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / batch.len() as f64)
}

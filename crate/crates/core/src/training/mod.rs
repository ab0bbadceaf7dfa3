//! Mini-batch training, gradient checking and checkpoints.

pub mod adam;
pub mod backprop;
pub mod checkpoint;
pub mod gradcheck;
pub mod train_loop;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use backprop::{batch_loss, forward_backward, Mode};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, parse_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, grad_check_against, relative_error, GradCheckReport};
pub use train_loop::{
    evaluate_model, format_log, predict_all, predict_probabilities, prepare_all, scoring_golds, train_loop, train_model,
    EpochLog, TrainConfig, TrainOutcome, LOG_HEADER,
};

#[cfg(test)]
mod tests;

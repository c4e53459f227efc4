//! Loss, regularization, optimization, scheduling and the epoch loop.

pub mod adam;
pub mod loss;
pub mod regularize;
pub mod schedule;
pub mod trainer;

pub use adam::{adam_step, OptimizerState};
pub use loss::{l2_on_tape, l2_penalty, weighted_bce};
pub use regularize::{
    apply_dropout, dropout_mask, noisy_params, perturb_hidden_weights, sample_step_noise, DropoutVariant,
    Regularization,
};
pub use schedule::{best_epoch, early_stop_check, lr_trace, PlateauHalving, StopDecision};
pub use trainer::{
    dataset_loss, predict_probs, targets, train, train_step, train_with_observer, EpochRecord, TrainOutcome,
    TrainingConfig, TrainingLog,
};

//! Loss, optimizer, learning-rate schedule, the two-direction training
//! step, the training loop and checkpoint files.

pub mod checkpoint;
mod config;
mod loss;
mod optim;
mod run;
mod step;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, NamedTensor};
pub use config::{lr_factor, TrainConfig};
pub use loss::smoothed_kl_loss;
pub use optim::{adadelta_step, Accumulators, AdadeltaConfig, OptimizerState};
pub use run::{quick_accuracy, run_training, stack_images, LogRow, TrainOutcome, FINAL_CHECKPOINT, TRAIN_LOG_FILE};
pub use step::{
    bidirectional_train_step, compute_gradients, direction_loss, model_directions, teacher_forcing, Batch,
    StepLosses,
};

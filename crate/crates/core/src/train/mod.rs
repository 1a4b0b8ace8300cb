//! Optimizer, checkpoints, both training stages and inference.

mod checkpoint;
mod config;
mod inference;
mod optim;
mod stages;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ScheduleConfig, Stage, TrainConfig};
pub use inference::{invert_video, run_inference, sample_from_latent};
pub use optim::{clip_global_norm, optimizer_step, AdamConfig, AdamState};
pub use stages::{log_tsv, mean_pair_loss, train_stage_a, train_stage_b, StepLog, TrainObserver, TrainOutcome};

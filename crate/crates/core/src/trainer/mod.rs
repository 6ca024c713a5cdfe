//! Optimization loop, checkpoints and inference.

pub mod checkpoint;
pub mod infer;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use infer::predict_volume;
pub use optim::{lr_schedule, nesterov_step, OptimConfig, Optimizer, BOUNDARY_FRACTIONS};
pub use train::{make_batch, score_samples, write_log_csv, EpochLog, SliceScores, Trainer};

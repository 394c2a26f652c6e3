//! End-to-end model, configuration, training, evaluation and ablations.

mod config;
mod eval;
mod model;
mod suite;
mod train;

pub use config::TrainConfig;
pub use eval::{ablate, ablation_csv, ablation_grid, evaluate, AblationGrid, AblationRow, Restorer};
pub use suite::gradcheck_suite;
pub use model::{FdikpModel, FdikpOutput, ModelConfig, StageOutput};
pub use train::{crop_loss, data_rng, init_model, sample_batch, train, train_with_progress, Checkpoint, Crop, StepLog, TrainOutcome, ValLog};

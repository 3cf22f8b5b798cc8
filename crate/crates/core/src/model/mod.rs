//! Per-resource risk predictor and its training loop.

pub mod adam;
pub mod checkpoint;
pub mod lstm;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, TrainingMeta};
pub use lstm::{ModelDims, ModelWeights, ParamLayout, SeqCache};
pub use train::{init_weights, train, EpochLog, TrainConfig, TrainOutcome};

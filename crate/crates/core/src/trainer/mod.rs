//! The incremental learning engine.

mod config;
mod engine;
mod model;

pub use config::{DataConfig, ExperimentConfig, Mode, RenderConfig, TamConfig, TrainConfig};
pub use engine::{
    experiment_dataset, experiment_schedule, micro_accuracy, Evaluation, FrozenChecksums, Learner, PredictionRecord,
};
pub use model::{prepare, Frozen, LossWeights, Net, Prepared, SampleForward};

use crate::error::{Error, Result};

/// Cosine annealing from `lr_start` at step 0 to `lr_end` at `total`.
pub fn cosine_lr(step: usize, total: usize, lr_start: f64, lr_end: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("total steps must be at least 1"));
    }
    if step > total {
        return Err(Error::invalid(format!("step {step} exceeds total {total}")));
    }
    let t = step as f64 / total as f64;
    Ok(lr_end + (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0)
}

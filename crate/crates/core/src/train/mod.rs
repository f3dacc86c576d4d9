//! Optimization: configuration, sampling, Adam and the two-stage loop.

mod adam;
mod config;
mod fit;
mod sampler;
mod trainer;

pub use adam::Adam;
pub use config::{BatchSizes, BlendDirection, BlendSchedule, DtSchedule, LossWeights, Stage1Image, TrainConfig, Weight};
pub use fit::{fit_flow, FlowFitConfig, FlowFitWeights};
pub use sampler::{sample_batches, sample_boundary, sample_pair, sample_uniform, BatchRngs, Batches, RayPool};
pub use trainer::{stage1, stage2, GradSum, NumericEvent, Stage, Trainer, PENALTY_ITERS};

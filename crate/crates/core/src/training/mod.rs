//! Rate–distortion training.

mod adam;
mod config;
mod loss;
mod trainer;

pub use adam::Adam;
pub use config::{RateObjective, TrainConfig};
pub use loss::{distortion_loss, distortion_loss_rasters, objective, rate_loss, Objective};
pub use trainer::{
    prepare_sample, train_step, EpochRecord, StepRecord, TrainOutputs, TrainSample, TrainState, Trainer,
};

//! Small fully connected networks with exact reverse-mode gradients, input
//! Jacobians and a deterministic Adam trainer.

mod mlp;
mod train;

pub use mlp::{Mlp, MlpCheckpoint, MlpGradient, Normalizer};
pub use train::{
    mean_loss, refit_output_layer, select_output_refit, train, EpochLoss, QuadraticLoss, Refit, RefitConfig,
    SampleLoss, SquaredError, TrainConfig, TrainSample, Trained,
};

#[cfg(test)]
mod tests;

//! A small decoder-only transformer with a hand-written reverse pass, AdamW,
//! the weighted-NLL training loop, sampling and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod generate;
pub mod gradcheck;
mod model;
mod params;
mod real;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{Checkpoint, MAGIC};
pub use config::{Arch, ModelConfig, TrainConfig};
pub use generate::{argmax, generate, generate_many, next_token_dist, pick_token, sequence_rng, Decoding, GENERATION_CHUNK};
pub use model::{forward, loss_and_grads, sequence_logprobs, Logits};
pub use params::{BlockOffsets, Gradients, Layout, ModelParams, TensorInfo, TensorKind};
pub use real::Real;
pub(crate) use train::map_ordered;
pub use train::{
    train, train_step, EpochMetrics, StepMetrics, TrainOutcome, TrainState, Trainer, DIVERGENCE_FACTOR,
    DIVERGENCE_PATIENCE,
};

#[cfg(test)]
mod tests;

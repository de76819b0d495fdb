//! Layers, the Adam optimizer, learning-rate schedules and checkpoints.

pub mod checkpoint;
mod layers;
mod optim;

pub use layers::{checksum, collect_grads, dropout, LinearLayer, MlpExtractor, Parameter, Phase};
pub use optim::{Adam, AdamConfig, LrSchedule};

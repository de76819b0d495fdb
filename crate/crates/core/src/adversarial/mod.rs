//! Camera discriminator, the camera loss and the alternating adversarial
//! training loop.

mod camera;
mod log;
mod steps;
mod trainer;

pub use camera::{acn_objective, camera_loss, smoothed_targets, CameraDiscriminator};
pub use log::{DiagnosticRecord, LogRecord, StepKind, TrainLog};
pub use steps::{d_step, f_step, FStepReport, FStepSettings};
pub use trainer::{train, IsolationAudit, ModelConfig, TrainMode, TrainOutcome, TrainerConfig};

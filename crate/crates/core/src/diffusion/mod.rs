//! Linear-β noise schedule, forward noising, the conditional ε-prediction
//! UNet and a strided ancestral sampler. Diffusion runs in pixel space on
//! images mapped to `[-1, 1]`.

mod sampler;
mod schedule;
mod unet;

pub use sampler::{ancestral_sample, ancestral_sample_with, sampling_timesteps, SampleRequest};
pub use schedule::{build_schedule, forward_noise, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START};
pub use unet::{init_unet, predict_noise, timestep_features, UNetConfig};

use crate::conditioning::ConditioningError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {steps} steps, β from {beta_start} to {beta_end}")]
    Schedule {
        steps: usize,
        beta_start: f64,
        beta_end: f64,
    },
    #[error("timestep {t} outside 1..={steps}")]
    Timestep { t: usize, steps: usize },
    #[error("sampling with {num_steps} steps needs 1 ≤ steps ≤ {steps}")]
    SampleSteps { num_steps: usize, steps: usize },
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
}

//! Denoiser + adapter bundle sharing one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{build_control, init_adapter, AdapterConfig, Assessment, ControlSignal, MapMode};
use crate::diffusion::{init_unet, predict_noise, DiffusionError, UNetConfig};
use crate::numerics::{NodeId, ParamStore, Scalar, Tape, Tensor};
use crate::pairing::SceneClass;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub unet: UNetConfig,
    pub adapter_base: usize,
    pub text_dim: usize,
}

impl ModelConfig {
    /// 32-channel base, multipliers (1, 2, 4), two residual blocks per
    /// level, 128-wide time embedding, 64-wide caption and attribute tables.
    pub fn standard(side: usize) -> Self {
        Self {
            unet: UNetConfig {
                side,
                channels: 3,
                base: 32,
                mults: vec![1, 2, 4],
                res_blocks: 2,
                time_dim: 128,
                caption_dim: 64,
                num_captions: SceneClass::ALL.len(),
            },
            adapter_base: 16,
            text_dim: 64,
        }
    }

    /// Smallest configuration that still exercises every path, at side 8;
    /// used for gradient checks.
    pub fn tiny() -> Self {
        Self::tiny_at(8)
    }

    /// [`ModelConfig::tiny`] widths at another image side; used for smoke runs.
    pub fn tiny_at(side: usize) -> Self {
        Self {
            unet: UNetConfig {
                side,
                channels: 3,
                base: 8,
                mults: vec![1, 2],
                res_blocks: 1,
                time_dim: 8,
                caption_dim: 4,
                num_captions: SceneClass::ALL.len(),
            },
            adapter_base: 4,
            text_dim: 4,
        }
    }

    pub fn adapter(&self) -> AdapterConfig {
        AdapterConfig {
            side: self.unet.side,
            base: self.adapter_base,
            mults: self.unet.mults.clone(),
            text_dim: self.text_dim,
            target_channels: (0..self.unet.levels()).map(|l| self.unet.level_channels(l)).collect(),
        }
    }
}

/// Per-batch conditioning derived from the input images.
#[derive(Clone, Debug)]
pub struct ControlInputs<S = f32> {
    /// `[n, 3, side, side]` HSV maps and `[n, 1, side, side]` contour maps.
    pub maps: (Tensor<S>, Tensor<S>),
    pub assessments: Vec<Assessment>,
    pub mode: MapMode,
}

#[derive(Clone, Debug)]
pub struct Model<S = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Model<S> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, DiffusionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_unet(&config.unet, &mut params, &mut rng)?;
        init_adapter(&config.adapter(), &mut params, &mut rng);
        Ok(Self { config, params })
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn control(&self, tape: &mut Tape<S>, inputs: &ControlInputs<S>) -> Result<ControlSignal, DiffusionError> {
        let refs: Vec<&Assessment> = inputs.assessments.iter().collect();
        Ok(build_control(tape, &self.params, &self.config.adapter(), &inputs.maps, &refs, inputs.mode)?)
    }

    pub fn predict(
        &self,
        tape: &mut Tape<S>,
        x_t: NodeId,
        timesteps: &[usize],
        captions: &[usize],
        x_clean: NodeId,
        cond: Option<&ControlSignal>,
    ) -> Result<NodeId, DiffusionError> {
        predict_noise(tape, &self.params, &self.config.unet, x_t, timesteps, captions, x_clean, cond)
    }
}

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::conditioning::{control_maps, MapMode};
use crate::diffusion::{forward_noise, NoiseSchedule};
use crate::model::{ControlInputs, Model};
use crate::numerics::{Gradients, Scalar, Tape, Tensor};
use crate::pairing::Triplet;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FoldPolicy {
    /// `t mod t_s`, with 0 mapped to `t_s`.
    #[default]
    Folded,
    /// `t` when `t ≤ t_s`, otherwise the input branch is skipped.
    Gated,
}

impl FromStr for FoldPolicy {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "folded" => Ok(FoldPolicy::Folded),
            "gated" => Ok(FoldPolicy::Gated),
            other => Err(TrainError::Config(format!("unknown fold policy `{other}` (folded|gated)"))),
        }
    }
}

impl fmt::Display for FoldPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FoldPolicy::Folded => "folded",
            FoldPolicy::Gated => "gated",
        })
    }
}

/// Input-branch timestep for a reference-branch timestep `t` (1-based).
pub fn fold_timestep(t: usize, threshold: usize, policy: FoldPolicy) -> Option<usize> {
    assert!(t >= 1 && threshold >= 1, "timesteps are 1-based");
    match policy {
        FoldPolicy::Folded => match t % threshold {
            0 => Some(threshold),
            r => Some(r),
        },
        FoldPolicy::Gated => (t <= threshold).then_some(t),
    }
}

/// Which terms enter the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    Dual,
    /// Reference branch only. Random draws are consumed identically, so a
    /// run with λ = 0 follows the same parameter trajectory.
    ReferenceOnly,
}

impl FromStr for Objective {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dual" => Ok(Objective::Dual),
            "reference_only" => Ok(Objective::ReferenceOnly),
            other => Err(TrainError::Config(format!("unknown objective `{other}` (dual|reference_only)"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Dual => "dual",
            Objective::ReferenceOnly => "reference_only",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub threshold: usize,
    pub fold: FoldPolicy,
    pub objective: Objective,
}

/// Random quantities of one batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw<S = f32> {
    pub t: usize,
    pub noise_ref: Tensor<S>,
    pub noise_inp: Tensor<S>,
}

impl<S: Scalar> Draw<S> {
    /// Timestep uniform on `1..=steps`, then reference noise, then input
    /// noise (always drawn, even when the input branch is not evaluated).
    pub fn sample(rng: &mut impl Rng, steps: usize, shape: &[usize]) -> Self {
        let t = rng.random_range(1..=steps);
        let noise_ref = Tensor::randn(shape.to_vec(), rng);
        let noise_inp = Tensor::randn(shape.to_vec(), rng);
        Self { t, noise_ref, noise_inp }
    }

    pub fn cast<T: Scalar>(&self) -> Draw<T> {
        Draw {
            t: self.t,
            noise_ref: self.noise_ref.cast(),
            noise_inp: self.noise_inp.cast(),
        }
    }
}

/// Model-ready tensors of one triplet: both images in `[-1, 1]` as
/// `[1, 3, side, side]` plus conditioning built from the input image.
#[derive(Clone, Debug)]
pub struct PreparedTriplet<S = f32> {
    pub x_ref: Tensor<S>,
    pub x_inp: Tensor<S>,
    pub caption: usize,
    pub control: ControlInputs<S>,
}

impl<S: Scalar> PreparedTriplet<S> {
    pub fn new(t: &Triplet, mode: MapMode) -> Result<Self, TrainError> {
        let batch = |img: &crate::raster::Image| {
            let x = img.to_signed_tensor::<S>();
            let mut shape = vec![1];
            shape.extend_from_slice(x.shape());
            x.reshape(shape)
        };
        Ok(Self {
            x_ref: batch(&t.reference.image)?,
            x_inp: batch(&t.input.image)?,
            caption: t.caption_id(),
            control: ControlInputs {
                maps: control_maps(&[&t.input.image])?,
                assessments: vec![t.assessment.clone()],
                mode,
            },
        })
    }

    pub fn cast<T: Scalar>(&self) -> PreparedTriplet<T> {
        PreparedTriplet {
            x_ref: self.x_ref.cast(),
            x_inp: self.x_inp.cast(),
            caption: self.caption,
            control: ControlInputs {
                maps: (self.control.maps.0.cast(), self.control.maps.1.cast()),
                assessments: self.control.assessments.clone(),
                mode: self.control.mode,
            },
        }
    }
}

/// Loss values of one element or a batch mean.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub l_ref: f64,
    pub l_inp: f64,
}

/// `L = L_ref + λ·L_inp` for one triplet and its gradient.
///
/// Both branches condition on the input image's control maps. The reference
/// branch denoises `x_ref` at `t` with `x_ref` as clean conditioning; the input
/// branch denoises `x_inp` at the folded timestep with `x_inp` as clean
/// conditioning. A gated-out input branch contributes 0.
pub fn dual_loss<S: Scalar>(
    model: &Model<S>,
    item: &PreparedTriplet<S>,
    draw: &Draw<S>,
    cfg: &LossConfig,
    schedule: &NoiseSchedule,
    with_grad: bool,
) -> Result<(LossParts, Option<Gradients<S>>), TrainError> {
    if cfg.threshold == 0 || cfg.threshold > schedule.steps() {
        return Err(TrainError::Config(format!(
            "threshold {} outside 1..={}",
            cfg.threshold,
            schedule.steps()
        )));
    }
    let mut tape = Tape::new();
    let cond = model.control(&mut tape, &item.control)?;
    let caption = [item.caption];

    let branch = |tape: &mut Tape<S>, x0: &Tensor<S>, t: usize, noise: &Tensor<S>| -> Result<_, TrainError> {
        let x_t = tape.constant(forward_noise(x0, t, noise, schedule)?);
        let clean = tape.constant(x0.clone());
        let pred = model.predict(tape, x_t, &[t], &caption, clean, Some(&cond))?;
        let target = tape.constant(noise.clone());
        Ok(tape.mse(pred, target)?)
    };

    let l_ref = branch(&mut tape, &item.x_ref, draw.t, &draw.noise_ref)?;
    let inp_t = match cfg.objective {
        Objective::Dual => fold_timestep(draw.t, cfg.threshold, cfg.fold),
        Objective::ReferenceOnly => None,
    };
    let (total, l_inp) = match inp_t {
        Some(t2) => {
            let l_inp = branch(&mut tape, &item.x_inp, t2, &draw.noise_inp)?;
            let weighted = tape.scale(l_inp, cfg.lambda)?;
            (tape.add(l_ref, weighted)?, Some(l_inp))
        }
        None => (l_ref, None),
    };
    let parts = LossParts {
        total: tape.value(total).item().as_f64(),
        l_ref: tape.value(l_ref).item().as_f64(),
        l_inp: l_inp.map_or(0.0, |id| tape.value(id).item().as_f64()),
    };
    if !parts.total.is_finite() {
        return Err(TrainError::NonFinite(parts.total));
    }
    let grads = if with_grad { Some(tape.backpropagate(total)?) } else { None };
    Ok((parts, grads))
}

/// Batch mean of [`dual_loss`] and its gradient.
///
/// Elements are evaluated in parallel. With `ordered` the per-element
/// gradients are summed in batch order, making the result independent of
/// thread scheduling; otherwise they are combined as threads finish.
pub fn batch_loss<S: Scalar>(
    model: &Model<S>,
    batch: &[&PreparedTriplet<S>],
    draws: &[Draw<S>],
    cfg: &LossConfig,
    schedule: &NoiseSchedule,
    ordered: bool,
) -> Result<(LossParts, Gradients<S>), TrainError> {
    if batch.is_empty() || batch.len() != draws.len() {
        return Err(TrainError::Config(format!(
            "batch of {} with {} draws",
            batch.len(),
            draws.len()
        )));
    }
    let run = |i: usize| -> Result<(LossParts, Gradients<S>), TrainError> {
        let (parts, grads) = dual_loss(model, batch[i], &draws[i], cfg, schedule, true)?;
        Ok((parts, grads.expect("requested")))
    };
    let add = |mut a: (LossParts, Gradients<S>), b: (LossParts, Gradients<S>)| {
        a.0.total += b.0.total;
        a.0.l_ref += b.0.l_ref;
        a.0.l_inp += b.0.l_inp;
        a.1.accumulate(&b.1);
        a
    };
    let (mut parts, mut grads) = if ordered {
        let items = (0..batch.len()).into_par_iter().map(run).collect::<Result<Vec<_>, _>>()?;
        let mut it = items.into_iter();
        let first = it.next().expect("non-empty batch");
        it.fold(first, add)
    } else {
        (0..batch.len())
            .into_par_iter()
            .map(run)
            .try_reduce_with(|a, b| Ok(add(a, b)))
            .expect("non-empty batch")?
    };
    let n = batch.len() as f64;
    parts.total /= n;
    parts.l_ref /= n;
    parts.l_inp /= n;
    grads.scale(S::of(1.0 / n));
    Ok((parts, grads))
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{ControlInputs, Model};
use crate::numerics::{Scalar, Tape, Tensor};

use super::{DiffusionError, NoiseSchedule};

/// `round(T·i / num_steps)` for `i = 1..=num_steps`, deduplicated, descending.
pub fn sampling_timesteps(steps: usize, num_steps: usize) -> Result<Vec<usize>, DiffusionError> {
    if num_steps == 0 || num_steps > steps {
        return Err(DiffusionError::SampleSteps { num_steps, steps });
    }
    let mut ts: Vec<usize> = (1..=num_steps)
        .map(|i| (steps as f64 * i as f64 / num_steps as f64).round() as usize)
        .collect();
    ts.dedup();
    ts.reverse();
    Ok(ts)
}

/// Ancestral sampling with an arbitrary noise predictor.
///
/// `predict(x_t, t)` returns ε̂ for the whole batch. Every batch element has
/// its own generator seeded from `seeds[i]`, which draws its initial noise and
/// then one fresh `z` per non-final step. Returns the final sample clamped to
/// `[-1, 1]`.
pub fn ancestral_sample_with<S: Scalar, F>(
    mut predict: F,
    shape: &[usize],
    schedule: &NoiseSchedule,
    num_steps: usize,
    seeds: &[u64],
) -> Result<Tensor<S>, DiffusionError>
where
    F: FnMut(&Tensor<S>, usize) -> Result<Tensor<S>, DiffusionError>,
{
    let ts = sampling_timesteps(schedule.steps(), num_steps)?;
    if shape.first() != Some(&seeds.len()) {
        return Err(DiffusionError::Config(format!(
            "{} seeds for batch shape {shape:?}",
            seeds.len()
        )));
    }
    let per: usize = shape[1..].iter().product();
    let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
    let mut x = Tensor::<S>::zeros(shape.to_vec());
    for (chunk, rng) in x.data_mut().chunks_mut(per).zip(&mut rngs) {
        chunk.copy_from_slice(Tensor::<S>::randn(vec![per], rng).data());
    }
    for (k, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(k + 1).copied().unwrap_or(0);
        let eps = predict(&x, t)?;
        if eps.shape() != x.shape() {
            return Err(DiffusionError::Shape {
                what: "predicted noise",
                expected: x.shape().to_vec(),
                got: eps.shape().to_vec(),
            });
        }
        let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
        let alpha = ab / ab_prev;
        let beta = 1.0 - alpha;
        let coef = beta / (1.0 - ab).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let sigma = if t_prev == 0 {
            0.0
        } else {
            (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt()
        };
        let (coef, inv_sqrt_alpha, sigma_s) = (S::of(coef), S::of(inv_sqrt_alpha), S::of(sigma));
        for (v, &e) in x.data_mut().iter_mut().zip(eps.data()) {
            *v = inv_sqrt_alpha * (*v - coef * e);
        }
        if t_prev != 0 {
            for (chunk, rng) in x.data_mut().chunks_mut(per).zip(&mut rngs) {
                let z = Tensor::<S>::randn(vec![per], rng);
                for (v, &zi) in chunk.iter_mut().zip(z.data()) {
                    *v = *v + sigma_s * zi;
                }
            }
        }
    }
    let lo = -S::one();
    Ok(x.map(|v| v.max(lo).min(S::one())))
}

/// One sampling job: clean conditioning image, caption ids and optional
/// control inputs for a batch, plus one seed per element.
pub struct SampleRequest<'a, S: Scalar> {
    pub x_clean: &'a Tensor<S>,
    pub captions: &'a [usize],
    pub control: Option<&'a ControlInputs<S>>,
    pub seeds: &'a [u64],
}

/// Strided ancestral sampling from the conditioned denoiser.
pub fn ancestral_sample<S: Scalar>(
    model: &Model<S>,
    schedule: &NoiseSchedule,
    num_steps: usize,
    req: &SampleRequest<'_, S>,
) -> Result<Tensor<S>, DiffusionError> {
    let shape = req.x_clean.shape().to_vec();
    ancestral_sample_with(
        |x, t| {
            let mut tape = Tape::new();
            let cond = match req.control {
                Some(c) => Some(model.control(&mut tape, c)?),
                None => None,
            };
            let x_t = tape.constant(x.clone());
            let clean = tape.constant(req.x_clean.clone());
            let ts = vec![t; shape[0]];
            let out = model.predict(&mut tape, x_t, &ts, req.captions, clean, cond.as_ref())?;
            Ok(tape.value(out).clone())
        },
        &shape,
        schedule,
        num_steps,
        req.seeds,
    )
}

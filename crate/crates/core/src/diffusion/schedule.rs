use crate::numerics::{Scalar, Tensor};

use super::DiffusionError;

/// Linear β schedule with derived α and cumulative ᾱ, stored in f64.
///
/// Timesteps are 1-based: index `t` reads entry `t - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    if steps < 2 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::Schedule {
            steps,
            beta_start,
            beta_end,
        });
    }
    let span = (steps - 1) as f64;
    let betas: Vec<f64> = (0..steps)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn linear(steps: usize) -> Result<Self, DiffusionError> {
        build_schedule(steps, DEFAULT_BETA_START, DEFAULT_BETA_END)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn idx(&self, t: usize) -> usize {
        assert!(t >= 1 && t <= self.steps(), "timestep {t} outside 1..={}", self.steps());
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[self.idx(t)]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[self.idx(t)]
        }
    }

    pub fn check_timestep(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::Timestep {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }
}

/// `x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · ε`, elementwise, without clamping.
pub fn forward_noise<S: Scalar>(
    x0: &Tensor<S>,
    t: usize,
    noise: &Tensor<S>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<S>, DiffusionError> {
    schedule.check_timestep(t)?;
    if x0.shape() != noise.shape() {
        return Err(DiffusionError::Shape {
            what: "noise",
            expected: x0.shape().to_vec(),
            got: noise.shape().to_vec(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (S::of(ab.sqrt()), S::of((1.0 - ab).sqrt()));
    let data = x0.data().iter().zip(noise.data()).map(|(&x, &e)| a * x + b * e).collect();
    Ok(Tensor::new(x0.shape().to_vec(), data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_alpha_bar_and_monotone() {
        let s = NoiseSchedule::linear(1000).unwrap();
        assert_eq!(s.alpha_bar(1), 1.0 - 1e-4);
        assert_eq!(s.beta(1000), 0.02);
        for t in 2..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(build_schedule(1, 1e-4, 0.02).is_err());
        assert!(build_schedule(10, 0.0, 0.02).is_err());
        assert!(build_schedule(10, 0.03, 0.02).is_err());
        assert!(build_schedule(10, 0.1, 1.0).is_err());
        assert!(build_schedule(2, 0.5, 0.5).is_ok());
    }

    #[test]
    fn degenerate_noise_cases() {
        let s = NoiseSchedule::linear(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::randn(vec![2, 3], &mut rng);
        let e = Tensor::<f64>::randn(vec![2, 3], &mut rng);
        let zero = Tensor::zeros(vec![2, 3]);
        let t = 400;
        let ab = s.alpha_bar(t);
        let only_x = forward_noise(&x, t, &zero, &s).unwrap();
        assert_eq!(only_x, x.map(|v| v * ab.sqrt()));
        let only_e = forward_noise(&zero, t, &e, &s).unwrap();
        assert_eq!(only_e, e.map(|v| v * (1.0 - ab).sqrt()));
        assert!(forward_noise(&x, 0, &e, &s).is_err());
        assert!(forward_noise(&x, 1001, &e, &s).is_err());
        assert!(forward_noise(&x, 5, &Tensor::zeros(vec![3, 2]), &s).is_err());
    }
}

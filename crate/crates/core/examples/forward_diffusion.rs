//! Noises one image along the linear schedule and shows how much of the
//! clean signal survives at each timestep, plus the sampler's stride.

use aesthete::diffusion::{forward_noise, sampling_timesteps, NoiseSchedule};
use aesthete::numerics::Tensor;
use aesthete::pairing::{generate_scene, AestheticParams, SceneClass, SceneSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let schedule = NoiseSchedule::linear(1000)?;
    let spec = SceneSpec {
        class: SceneClass::Ring,
        layout_seed: 1,
        palette: 2,
    };
    let (img, _) = generate_scene(&spec, &AestheticParams::ideal(), 32)?;
    let x0 = img.to_signed_tensor::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise: Tensor<f64> = Tensor::randn(x0.shape().to_vec(), &mut rng);

    println!("{:>5} {:>9} {:>10} {:>10}", "t", "beta", "alpha_bar", "corr(x0)");
    for t in [1, 50, 100, 250, 500, 750, 900, 1000] {
        let xt = forward_noise(&x0, t, &noise, &schedule)?;
        println!(
            "{t:>5} {:>9.5} {:>10.5} {:>10.4}",
            schedule.beta(t),
            schedule.alpha_bar(t),
            correlation(x0.data(), xt.data())
        );
    }
    println!("50-step sampler visits {:?}", &sampling_timesteps(1000, 50)?[..6]);
    Ok(())
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma).powi(2);
        bb += (y - mb).powi(2);
    }
    ab / (aa * bb).sqrt()
}

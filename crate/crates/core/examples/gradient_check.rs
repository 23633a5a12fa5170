//! Compares backpropagated gradients with central finite differences on a
//! random sample of coordinates, at both 32-bit and 64-bit precision.

use aesthete::numerics::{finite_diff_at, relative_error, Coord, NumericsError, ParamStore};
use aesthete::selftest::GradProblem;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let problem = GradProblem::new(2, 0)?;
    let base: ParamStore<f64> = problem.model.cast::<f64>().params;
    let all: Vec<Coord> = base
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |index| Coord { name: name.clone(), index }))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let coords: Vec<Coord> = all.choose_multiple(&mut rng, 40).cloned().collect();

    let loss = |p: &ParamStore<f64>| {
        problem
            .loss_at(p.clone(), false)
            .map(|(l, _)| l)
            .map_err(|e| NumericsError::Unsupported(e.to_string()))
    };
    let numeric = finite_diff_at(&loss, &base, &coords, 1e-5)?;
    let g32 = problem.analytic::<f32>()?;
    let g64 = problem.analytic::<f64>()?;

    let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
    for (c, &fd) in coords.iter().zip(&numeric) {
        let a32 = g32.get(&c.name).map_or(0.0, |g| g.data()[c.index] as f64);
        let a64 = g64.get(&c.name).map_or(0.0, |g| g.data()[c.index]);
        worst32 = worst32.max(relative_error(a32, fd, 1e-6));
        worst64 = worst64.max(relative_error(a64, fd, 1e-6));
    }
    println!("{} of {} coordinates sampled", coords.len(), all.len());
    println!("max relative error: f32 {worst32:.3e}, f64 {worst64:.3e}");
    Ok(())
}

//! Trains the tiny model with the dual objective for a few dozen updates and
//! prints the reference and input branch losses.

use aesthete::conditioning::MapMode;
use aesthete::model::{Model, ModelConfig};
use aesthete::selftest::small_triplets;
use aesthete::trainer::{fold_timestep, train_loop, FoldPolicy, PreparedTriplet, TrainConfig, TrainState};

fn main() -> anyhow::Result<()> {
    let cfg = TrainConfig {
        steps: 100,
        threshold: 60,
        batch_size: 4,
        total_steps: 40,
        log_every: 5,
        side: 16,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    for t in [30, 60, 61, 95, 100] {
        println!(
            "t = {t:>3}: folded -> {:?}, gated -> {:?}",
            fold_timestep(t, cfg.threshold, FoldPolicy::Folded),
            fold_timestep(t, cfg.threshold, FoldPolicy::Gated)
        );
    }

    let triplets = small_triplets(16, cfg.side, 5)?;
    let corpus = triplets
        .iter()
        .map(|t| PreparedTriplet::new(t, MapMode::Full))
        .collect::<Result<Vec<_>, _>>()?;
    let mut state = TrainState::new(Model::init(ModelConfig::tiny_at(cfg.side), cfg.seed)?);
    println!("{} parameters", state.model.params.num_scalars());
    println!("{:>5} {:>9} {:>9} {:>9}", "step", "loss", "l_ref", "l_inp");
    for row in train_loop(&cfg, &mut state, &corpus, None)? {
        println!("{:>5} {:>9.5} {:>9.5} {:>9.5}", row.step, row.loss, row.l_ref, row.l_inp);
    }
    Ok(())
}

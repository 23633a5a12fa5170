//! Briefly trains the tiny model, enhances held-out inputs with it and scores
//! the results for aesthetics and content consistency.

use aesthete::conditioning::MapMode;
use aesthete::eval::{run_eval, EvalOptions};
use aesthete::model::{Model, ModelConfig};
use aesthete::selftest::small_triplets;
use aesthete::trainer::{train_loop, PreparedTriplet, TrainConfig, TrainState};

fn main() -> anyhow::Result<()> {
    let cfg = TrainConfig {
        steps: 100,
        threshold: 90,
        batch_size: 4,
        total_steps: 30,
        side: 16,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let train = small_triplets(16, cfg.side, 1)?;
    let test = small_triplets(4, cfg.side, 2)?;
    let corpus = train
        .iter()
        .map(|t| PreparedTriplet::new(t, MapMode::Full))
        .collect::<Result<Vec<_>, _>>()?;
    let mut state = TrainState::new(Model::init(ModelConfig::tiny_at(cfg.side), cfg.seed)?);
    train_loop(&cfg, &mut state, &corpus, None)?;

    let opts = EvalOptions {
        num_steps: 10,
        seeds: vec![0, 1],
        ..EvalOptions::default()
    };
    let report = run_eval(&state.model, &cfg.schedule()?, &test, &opts, "")?;
    print!("{}", report.csv());
    let s = &report.summary;
    println!(
        "PAS {:.3} -> {:.3} (delta {:+.3}), SCS {:.3}, mismatched SCS {:.3}",
        s.mean_pas_in, s.mean_pas_out, s.delta_pas, s.mean_scs, s.null_scs
    );
    let out = std::path::Path::new("target/example_eval");
    std::fs::create_dir_all(out)?;
    for (i, img) in report.outputs.iter().enumerate() {
        img.save_png(&out.join(format!("{i}.png")))?;
    }
    println!("{} outputs written to {}", report.outputs.len(), out.display());
    Ok(())
}

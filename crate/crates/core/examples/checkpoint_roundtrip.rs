//! Saves a trained state with its configuration, reloads it and resumes
//! training to the same result as an uninterrupted run.

use aesthete::checkpoint::Checkpoint;
use aesthete::conditioning::MapMode;
use aesthete::model::{Model, ModelConfig};
use aesthete::selftest::small_triplets;
use aesthete::trainer::{train_loop, PreparedTriplet, TrainConfig, TrainState};

fn main() -> anyhow::Result<()> {
    let mut cfg = TrainConfig {
        steps: 100,
        threshold: 90,
        batch_size: 2,
        total_steps: 8,
        side: 16,
        ..TrainConfig::default()
    };
    let corpus = small_triplets(6, cfg.side, 0)?
        .iter()
        .map(|t| PreparedTriplet::new(t, MapMode::Full))
        .collect::<Result<Vec<_>, _>>()?;
    let init = TrainState::new(Model::init(ModelConfig::tiny_at(cfg.side), 0)?);

    let mut full = init.clone();
    train_loop(&cfg, &mut full, &corpus, None)?;

    let mut part = init;
    cfg.total_steps = 4;
    train_loop(&cfg, &mut part, &corpus, None)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("half.diae");
    part.checkpoint("model = tiny\nside = 16\n").save(&path)?;
    let bytes = std::fs::metadata(&path)?.len();

    let loaded = Checkpoint::load(&path)?;
    println!("saved step {} ({bytes} bytes), config:\n{}", loaded.step(), loaded.config_text);
    let mut resumed = TrainState {
        model: Model {
            config: ModelConfig::tiny_at(cfg.side),
            params: loaded.params,
        },
        optimizer: loaded.optimizer,
    };
    cfg.total_steps = 8;
    train_loop(&cfg, &mut resumed, &corpus, None)?;
    let same = resumed.model.params == full.model.params && resumed.optimizer == full.optimizer;
    println!("resumed run identical to uninterrupted run: {same}");
    Ok(())
}

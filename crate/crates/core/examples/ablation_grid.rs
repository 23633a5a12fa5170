//! Runs both ablation grids on the tiny model with a very small budget and
//! prints the seed-averaged verdicts.

use aesthete::eval::{
    ablation_map, ablation_ts, grid_csv, map_pattern, ts_scs_trend, variant_means, AblationSetup, EvalOptions,
};
use aesthete::model::ModelConfig;
use aesthete::selftest::small_triplets;
use aesthete::trainer::TrainConfig;

fn main() -> anyhow::Result<()> {
    let train_set = small_triplets(12, 16, 3)?;
    let test_set = small_triplets(3, 16, 4)?;
    let setup = AblationSetup {
        model: ModelConfig::tiny_at(16),
        train: TrainConfig {
            steps: 100,
            threshold: 90,
            batch_size: 2,
            total_steps: 4,
            side: 16,
            ..TrainConfig::default()
        },
        train_set: &train_set,
        test_set: &test_set,
        eval: EvalOptions {
            num_steps: 5,
            ..EvalOptions::default()
        },
        seeds: vec![0, 1],
        step_cap: 100,
        warm_start: None,
    };

    let rows = ablation_ts(&setup, &[30, 60, 90])?;
    print!("{}", grid_csv(&rows));
    for (t_s, scs) in ts_scs_trend(&variant_means(&rows)) {
        println!("t_s = {t_s}: mean SCS {scs:.4}");
    }

    let rows = ablation_map(&setup)?;
    print!("{}", grid_csv(&rows));
    if let Some(p) = map_pattern(&variant_means(&rows)) {
        println!("{p:?}, holds: {}", p.holds());
    }
    Ok(())
}

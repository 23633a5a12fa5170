use crate::conditioning::MapMode;
use crate::model::{Model, ModelConfig};
use crate::pairing::Triplet;
use crate::trainer::{train_loop, PreparedTriplet, TrainConfig, TrainState};

use super::{run_eval, Aggregate, EvalError, EvalOptions};

/// Shared inputs of an ablation grid.
#[derive(Clone, Debug)]
pub struct AblationSetup<'a> {
    pub model: ModelConfig,
    /// Base training configuration; its seed is replaced per grid cell.
    pub train: TrainConfig,
    pub train_set: &'a [Triplet],
    pub test_set: &'a [Triplet],
    /// Sampling options; the seed list is replaced per grid cell.
    pub eval: EvalOptions,
    pub seeds: Vec<u64>,
    /// Largest number of updates a single cell may run.
    pub step_cap: u64,
    /// Optional shared starting point; cells train `train.total_steps`
    /// further updates from it.
    pub warm_start: Option<&'a TrainState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub variant: String,
    pub seed: u64,
    pub aggregate: Aggregate,
    pub null_scs: f64,
}

pub const GRID_CSV_HEADER: &str = "variant,seed,mean_pas_in,mean_pas_out,delta_pas,mean_scs,null_scs";

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from(GRID_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let a = &r.aggregate;
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.variant, r.seed, a.mean_pas_in, a.mean_pas_out, a.delta_pas, a.mean_scs, r.null_scs
        ));
    }
    s
}

/// Seed-averaged aggregate of every variant, in first-appearance order.
pub fn variant_means(rows: &[GridRow]) -> Vec<(String, Aggregate)> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.variant) {
            order.push(r.variant.clone());
        }
    }
    order
        .into_iter()
        .map(|v| {
            let cells: Vec<&GridRow> = rows.iter().filter(|r| r.variant == v).collect();
            let k = cells.len() as f64;
            let mean = |f: fn(&Aggregate) -> f64| cells.iter().map(|r| f(&r.aggregate)).sum::<f64>() / k;
            let agg = Aggregate {
                count: cells.iter().map(|r| r.aggregate.count).sum(),
                mean_pas_in: mean(|a| a.mean_pas_in),
                mean_pas_out: mean(|a| a.mean_pas_out),
                delta_pas: mean(|a| a.delta_pas),
                mean_scs: mean(|a| a.mean_scs),
            };
            (v, agg)
        })
        .collect()
}

impl AblationSetup<'_> {
    fn check_budget(&self) -> Result<(), EvalError> {
        if self.train.total_steps > self.step_cap {
            return Err(EvalError::Budget {
                steps: self.train.total_steps,
                cap: self.step_cap,
            });
        }
        Ok(())
    }

    /// Trains one cell and evaluates it with the cell's seed.
    fn cell(&self, variant: String, cfg: TrainConfig, mode: MapMode, seed: u64) -> Result<GridRow, EvalError> {
        let cfg = TrainConfig {
            seed,
            map_mode: mode,
            ..cfg
        };
        let mut state = match self.warm_start {
            Some(w) => w.clone(),
            None => TrainState::new(Model::init(self.model.clone(), seed)?),
        };
        let cfg = TrainConfig {
            total_steps: state.step() + cfg.total_steps,
            ..cfg
        };
        let prepared = self
            .train_set
            .iter()
            .map(|t| PreparedTriplet::new(t, mode))
            .collect::<Result<Vec<_>, _>>()?;
        log::info!("ablation cell {variant} seed {seed}: training to step {}", cfg.total_steps);
        train_loop(&cfg, &mut state, &prepared, None)?;
        let opts = EvalOptions {
            seeds: vec![seed],
            map_mode: mode,
            ..self.eval.clone()
        };
        let report = run_eval(&state.model, &cfg.schedule()?, self.test_set, &opts, "")?;
        let s = &report.summary.per_seed[0];
        Ok(GridRow {
            variant,
            seed,
            aggregate: s.aggregate,
            null_scs: s.null_scs,
        })
    }
}

/// Threshold sweep: one trained and evaluated cell per (t_s, seed), rows in
/// value-major order.
pub fn ablation_ts(setup: &AblationSetup<'_>, values: &[usize]) -> Result<Vec<GridRow>, EvalError> {
    setup.check_budget()?;
    if let Some(&v) = values.iter().find(|&&v| v == 0 || v > setup.train.steps) {
        return Err(EvalError::Config(format!("t_s = {v} outside 1..={}", setup.train.steps)));
    }
    let mut rows = Vec::with_capacity(values.len() * setup.seeds.len());
    for &v in values {
        for &seed in &setup.seeds {
            let cfg = TrainConfig {
                threshold: v,
                ..setup.train.clone()
            };
            rows.push(setup.cell(format!("t_s={v}"), cfg, setup.train.map_mode, seed)?);
        }
    }
    Ok(rows)
}

pub const MAP_VARIANTS: [MapMode; 3] = [MapMode::Full, MapMode::NoVisual, MapMode::NoText];

/// Conditioning ablation: full, visual maps off and attribute text off.
pub fn ablation_map(setup: &AblationSetup<'_>) -> Result<Vec<GridRow>, EvalError> {
    setup.check_budget()?;
    let mut rows = Vec::with_capacity(MAP_VARIANTS.len() * setup.seeds.len());
    for mode in MAP_VARIANTS {
        for &seed in &setup.seeds {
            rows.push(setup.cell(mode.name().to_owned(), setup.train.clone(), mode, seed)?);
        }
    }
    Ok(rows)
}

/// True when `values` never decrease, except for at most one adjacent drop
/// no larger than `slack`.
pub fn nondecreasing_with_slack(values: &[f64], slack: f64) -> bool {
    let drops: Vec<f64> = values.windows(2).map(|w| w[0] - w[1]).filter(|&d| d > 0.0).collect();
    drops.is_empty() || (drops.len() == 1 && drops[0] <= slack)
}

/// Seed-averaged SCS of a threshold sweep, ordered by increasing `t_s`.
pub fn ts_scs_trend(means: &[(String, Aggregate)]) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = means
        .iter()
        .filter_map(|(name, a)| name.strip_prefix("t_s=")?.parse().ok().map(|t| (t, a.mean_scs)))
        .collect();
    v.sort_by_key(|&(t, _)| t);
    v
}

/// Directional outcome of the conditioning ablation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapPattern {
    pub full_pas_beats_visual_only: bool,
    pub full_pas_beats_text_only: bool,
    /// Visual-only consistency is at least text-only consistency.
    pub visual_only_scs_beats_text_only: bool,
}

impl MapPattern {
    pub fn holds(&self) -> bool {
        self.full_pas_beats_visual_only && self.full_pas_beats_text_only && self.visual_only_scs_beats_text_only
    }
}

pub fn map_pattern(means: &[(String, Aggregate)]) -> Option<MapPattern> {
    let get = |m: MapMode| means.iter().find(|(n, _)| n == m.name()).map(|(_, a)| *a);
    let (full, wo_v, wo_t) = (get(MapMode::Full)?, get(MapMode::NoVisual)?, get(MapMode::NoText)?);
    Some(MapPattern {
        full_pas_beats_visual_only: full.mean_pas_out >= wo_t.mean_pas_out,
        full_pas_beats_text_only: full.mean_pas_out >= wo_v.mean_pas_out,
        visual_only_scs_beats_text_only: wo_t.mean_scs >= wo_v.mean_scs,
    })
}

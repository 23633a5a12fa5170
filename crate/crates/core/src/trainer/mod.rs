//! Dual-branch supervision: the reference image supervises every timestep,
//! the input image supervises a folded (or gated) timestep with its own noise.

mod loss;

pub use loss::{batch_loss, dual_loss, fold_timestep, Draw, FoldPolicy, LossConfig, LossParts, Objective, PreparedTriplet};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::conditioning::{ConditioningError, MapMode};
use crate::diffusion::{build_schedule, DiffusionError, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START};
use crate::model::Model;
use crate::numerics::{AdamWConfig, AdamWState, NumericsError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss {0}")]
    NonFinite(f64),
    #[error("no training triplets")]
    EmptyCorpus,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Diffusion steps `T`.
    pub steps: usize,
    /// Input-branch threshold `t_s`.
    pub threshold: usize,
    pub lambda: f64,
    pub fold: FoldPolicy,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    /// Save a checkpoint every this many updates (0 disables).
    pub checkpoint_every: u64,
    /// Write a metrics row every this many updates.
    pub log_every: u64,
    pub side: usize,
    /// Sum per-sample gradients in batch order.
    pub deterministic: bool,
    pub map_mode: MapMode,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            threshold: 900,
            lambda: 1.0,
            fold: FoldPolicy::Folded,
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 16,
            total_steps: 5000,
            seed: 0,
            checkpoint_every: 1000,
            log_every: 10,
            side: 32,
            deterministic: true,
            map_mode: MapMode::Full,
            objective: Objective::Dual,
        }
    }
}

impl TrainConfig {
    /// `round(0.9·T)`, the default threshold for a given number of steps.
    pub fn default_threshold(steps: usize) -> usize {
        ((0.9 * steps as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.steps < 2 {
            return fail(format!("T = {} (need at least 2)", self.steps));
        }
        if !(1..=self.steps).contains(&self.threshold) {
            return fail(format!("t_s = {} outside 1..={}", self.threshold, self.steps));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda = {} (need finite and ≥ 0)", self.lambda));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr = {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay = {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return fail("batch_size and log_every must be positive".into());
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            threshold: self.threshold,
            fold: self.fold,
            objective: self.objective,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, TrainError> {
        Ok(build_schedule(self.steps, DEFAULT_BETA_START, DEFAULT_BETA_END)?)
    }
}

/// Random stream of update `step` (0-based): independent of every other step,
/// so a resumed run draws exactly what the uninterrupted run would.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Batch indices (with replacement) and per-element draws of one update.
pub fn draw_batch(cfg: &TrainConfig, step: u64, corpus_len: usize, shape: &[usize]) -> (Vec<usize>, Vec<Draw>) {
    let mut rng = step_rng(cfg.seed, step);
    let indices: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..corpus_len)).collect();
    let draws = (0..cfg.batch_size).map(|_| Draw::sample(&mut rng, cfg.steps, shape)).collect();
    (indices, draws)
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model<f32>,
    pub optimizer: AdamWState<f32>,
}

impl TrainState {
    pub fn new(model: Model<f32>) -> Self {
        Self {
            model,
            optimizer: AdamWState::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn checkpoint(&self, config_text: &str) -> Checkpoint {
        Checkpoint {
            config_text: config_text.to_owned(),
            params: self.model.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    /// Number of updates applied, 1-based.
    pub step: u64,
    pub loss: f64,
    pub l_ref: f64,
    pub l_inp: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "step,loss,l_ref,l_inp,lr";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.loss, self.l_ref, self.l_inp, self.lr)
    }
}

/// One AdamW update over the mean loss of the batch drawn for the current step.
pub fn train_step(
    state: &mut TrainState,
    corpus: &[PreparedTriplet],
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<MetricsRow, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let shape = corpus[0].x_ref.shape().to_vec();
    let (indices, draws) = draw_batch(cfg, state.step(), corpus.len(), &shape);
    let batch: Vec<&PreparedTriplet> = indices.iter().map(|&i| &corpus[i]).collect();
    let (parts, grads) = batch_loss(&state.model, &batch, &draws, &cfg.loss(), schedule, cfg.deterministic)?;
    if !parts.total.is_finite() {
        return Err(TrainError::NonFinite(parts.total));
    }
    state.optimizer.step(&mut state.model.params, &grads, &cfg.optimizer())?;
    if !state.model.params.all_finite() {
        return Err(TrainError::NonFinite(f64::NAN));
    }
    Ok(MetricsRow {
        step: state.step(),
        loss: parts.total,
        l_ref: parts.l_ref,
        l_inp: parts.l_inp,
        lr: cfg.lr,
    })
}

/// Where [`train_loop`] writes metrics and checkpoints.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
    /// Embedded in every checkpoint.
    pub config_text: String,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.diae";

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:06}.diae"))
}

/// Runs updates until `cfg.total_steps`, continuing from the state's counter.
///
/// Metrics rows already on disk for later steps are dropped on resume.
/// Returns the rows produced by this call.
pub fn train_loop(
    cfg: &TrainConfig,
    state: &mut TrainState,
    corpus: &[PreparedTriplet],
    output: Option<&TrainOutput>,
) -> Result<Vec<MetricsRow>, TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let schedule = cfg.schedule()?;
    let mut metrics = match output {
        Some(out) => {
            fs::create_dir_all(&out.dir)?;
            Some(open_metrics(&out.dir.join(METRICS_FILE), state.step())?)
        }
        None => None,
    };
    let mut rows = Vec::new();
    while state.step() < cfg.total_steps {
        let row = train_step(state, corpus, cfg, &schedule)?;
        if row.step % cfg.log_every == 0 {
            log::info!("step {} loss {:.5} (ref {:.5}, inp {:.5})", row.step, row.loss, row.l_ref, row.l_inp);
            if let Some(f) = metrics.as_mut() {
                writeln!(f, "{}", row.csv())?;
            }
            rows.push(row);
        }
        if let Some(out) = output {
            if cfg.checkpoint_every > 0 && row.step % cfg.checkpoint_every == 0 {
                state.checkpoint(&out.config_text).save(&checkpoint_path(&out.dir, row.step))?;
            }
        }
    }
    if let Some(out) = output {
        state.checkpoint(&out.config_text).save(&out.dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(rows)
}

fn open_metrics(path: &Path, resume_step: u64) -> Result<fs::File, TrainError> {
    let mut kept = vec![METRICS_HEADER.to_owned()];
    if resume_step > 0 && path.exists() {
        for line in fs::read_to_string(path)?.lines().skip(1) {
            let step: u64 = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| TrainError::Config(format!("bad metrics row `{line}`")))?;
            if step <= resume_step {
                kept.push(line.to_owned());
            }
        }
    }
    let mut f = fs::File::create(path)?;
    for line in kept {
        writeln!(f, "{line}")?;
    }
    Ok(f)
}

#[cfg(test)]
mod tests;

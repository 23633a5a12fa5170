//! Proxy scores for aesthetics (PAS) and content consistency (SCS), the
//! evaluation run and the ablation grids.

mod ablation;
mod measure;
mod report;

pub use ablation::{
    ablation_map, ablation_ts, grid_csv, map_pattern, nondecreasing_with_slack, ts_scs_trend, variant_means,
    AblationSetup, GridRow, MapPattern, GRID_CSV_HEADER, MAP_VARIANTS,
};
pub use measure::{
    blur_calibration, calibrate_blur, edge_width, estimate_blur, mask_iou, measure_stats, ncc, otsu_threshold,
    pas_score, scs_score, segment, BlurCalibration, MeasuredStats, ScsScore, CALIBRATION_SCENES,
};
pub use report::{
    generate, run_eval, sample_seed, score_pair, Aggregate, Bands, EvalOptions, EvalReport, EvalRow, EvalSummary,
    SeedSummary, EVAL_CSV_HEADER, HIGH_BAND, LOW_BAND,
};

use crate::conditioning::ConditioningError;
use crate::diffusion::DiffusionError;
use crate::pairing::PairingError;
use crate::raster::RasterError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("size mismatch: {0}")]
    Size(String),
    #[error("no test triplets")]
    Empty,
    #[error("{0}")]
    Config(String),
    #[error("ablation cell needs {steps} updates, over the cap of {cap}")]
    Budget { steps: u64, cap: u64 },
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

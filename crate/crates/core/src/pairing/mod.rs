//! Synthetic scene corpus, the parametric MOS oracle and imperfect pairing.
//!
//! Scenes of the same class share semantics (subject shape and caption) but
//! differ in layout, palette and aesthetic parameters. Pairs join a poorly
//! scored image with the best-scored image of its class.

mod corpus;
mod params;
mod scene;

pub use corpus::{
    assemble_triplets, block_seed, form_pairs, generate_corpus, load_corpus, load_pairs, load_split, load_triplets,
    render_corpus, sample_entries, sample_entries_until, save_corpus, save_pairs, split_pairs, triplets_path, Corpus,
    CorpusEntry, CorpusImage, PairIndex, Triplet, DEFAULT_HIGH_MIN, DEFAULT_LOW_MAX, METADATA_FILE, TEST_FILE,
    TRAIN_FILE, TRIPLETS_FILE,
};
pub use params::{
    assessment_text, mos_unchecked, parametric_mos, thirds_distance, AestheticParams, MOS_BRIGHTNESS_TARGET,
    MOS_SATURATION_TARGET,
};
pub use scene::{adjust_hsv, gaussian_blur, generate_scene, SceneClass, SceneSpec, PALETTES, SIDES, SUBJECT_VALUE};

use crate::conditioning::ConditioningError;
use crate::raster::RasterError;

#[derive(Debug, thiserror::Error)]
pub enum PairingError {
    #[error("invalid aesthetic parameters: {0}")]
    Params(String),
    #[error("invalid scene: {0}")]
    Spec(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("low band {low_max} must lie below high band {high_min}")]
    Bands { low_max: f64, high_min: f64 },
    #[error("only {have} pairs available, {needed} needed")]
    Shortage { have: usize, needed: usize },
    #[error("triplet index refers to unknown image {0}")]
    MissingImage(usize),
    #[error("metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

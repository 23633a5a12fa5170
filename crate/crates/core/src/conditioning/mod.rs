//! Control maps and the zero-initialized adapter that injects them.
//!
//! Colour conditioning pairs an HSV map with colour-attribute tokens;
//! structure conditioning pairs a contour map with structure-attribute
//! tokens. Each pair is encoded per UNet resolution level and added to the
//! denoiser's encoder activations through a 1×1 projection that starts at 0.

mod adapter;
mod assessment;
mod contour;
mod hsv;

pub use adapter::{
    assemble_control, build_control, control_maps, encode_text, encode_visual, init_adapter, inject, inject_level,
    AdapterConfig, CondPair, ControlSignal, MapMode, VisualFeatures,
};
pub(crate) use adapter::{conv, insert_conv};
pub use assessment::{encode_assessment, Assessment, Category, Token, VOCABULARY};
pub use contour::{contour_map, ContourExtractor, ContourMap, Sobel};
pub use hsv::{hsv_map_to_rgb, hsv_to_rgb, rgb_to_hsv, rgb_to_hsv_map, HsvMap};

use crate::numerics::NumericsError;
use crate::raster::RasterError;

#[derive(Debug, thiserror::Error)]
pub enum ConditioningError {
    #[error("expected a {expected}-channel image, got {got} channels")]
    Channels { expected: usize, got: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("unknown attribute token `{0}`")]
    UnknownToken(String),
    #[error("token `{token}` does not belong to the {group} group")]
    WrongGroup { token: String, group: &'static str },
    #[error("malformed assessment string: {0}")]
    Malformed(String),
    #[error("{what}: expected {expected:?}, got {got:?}")]
    Size {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("control signal is missing {0}")]
    MissingComponent(&'static str),
    #[error("adapter parameter `{0}` is not initialized")]
    Uninitialized(String),
}

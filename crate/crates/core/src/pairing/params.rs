use serde::{Deserialize, Serialize};

use crate::conditioning::{Assessment, Token};

use super::PairingError;

/// Generator-side aesthetic controls of one rendered scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AestheticParams {
    /// Saturation multiplier in `[0, 1]`.
    pub saturation: f64,
    /// Brightness (HSV value) multiplier in `[0, 1]`.
    pub brightness: f64,
    /// Hue rotation in `[0, 1)`.
    pub hue_shift: f64,
    /// Subject centroid, fractions of the image side.
    pub cx: f64,
    pub cy: f64,
    /// Gaussian blur standard deviation in pixels, `[0, 2]`.
    pub blur: f64,
    /// Subject area over image area, `(0, 0.9]`.
    pub size: f64,
}

impl AestheticParams {
    /// The scoring optimum: saturation 0.75, brightness 0.65, subject on a
    /// thirds intersection, no blur.
    pub fn ideal() -> Self {
        Self {
            saturation: 0.75,
            brightness: 0.65,
            hue_shift: 0.0,
            cx: 1.0 / 3.0,
            cy: 1.0 / 3.0,
            blur: 0.0,
            size: 0.25,
        }
    }

    pub fn validate(&self) -> Result<(), PairingError> {
        let unit = 0.0..=1.0;
        let checks = [
            ("saturation", unit.contains(&self.saturation)),
            ("brightness", unit.contains(&self.brightness)),
            ("hue_shift", (0.0..1.0).contains(&self.hue_shift)),
            ("cx", unit.contains(&self.cx)),
            ("cy", unit.contains(&self.cy)),
            ("blur", (0.0..=2.0).contains(&self.blur)),
            ("size", self.size > 0.0 && self.size <= 0.9),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((field, _)) => Err(PairingError::Params(format!("{field} out of range in {self:?}"))),
            None => Ok(()),
        }
    }
}

const THIRDS: [f64; 2] = [1.0 / 3.0, 2.0 / 3.0];

/// Distance from `(cx, cy)` to the nearest thirds intersection, divided by
/// the largest such distance inside the unit square (`√2/3`, at a corner).
pub fn thirds_distance(cx: f64, cy: f64) -> f64 {
    let mut best = f64::INFINITY;
    for &tx in &THIRDS {
        for &ty in &THIRDS {
            best = best.min((cx - tx).hypot(cy - ty));
        }
    }
    best / (2f64.sqrt() / 3.0)
}

pub const MOS_SATURATION_TARGET: f64 = 0.75;
pub const MOS_BRIGHTNESS_TARGET: f64 = 0.65;

/// `clamp(10 − 6|s − 0.75| − 6|v − 0.65| − 8·d₃ − 4·min(σ, 1), 1, 10)`.
pub fn mos_unchecked(p: &AestheticParams) -> f64 {
    let score = 10.0
        - 6.0 * (p.saturation - MOS_SATURATION_TARGET).abs()
        - 6.0 * (p.brightness - MOS_BRIGHTNESS_TARGET).abs()
        - 8.0 * thirds_distance(p.cx, p.cy)
        - 4.0 * p.blur.min(1.0);
    score.clamp(1.0, 10.0)
}

pub fn parametric_mos(p: &AestheticParams) -> Result<f64, PairingError> {
    p.validate()?;
    Ok(mos_unchecked(p))
}

fn tok(s: &str) -> Token {
    Token::parse(s).expect("vocabulary token")
}

/// Maps parameters to colour tokens (saturation, lighting, tone) and
/// structure tokens (focus, shot type, composition, technique).
///
/// Tone by hue shift: `[0.45, 0.95)` cool, `[0.2, 0.45) ∪ [0.95, 1)` neutral,
/// `[0, 0.2)` warm. Technique: `symmetry` when the centroid lies within 0.05
/// of the vertical midline, `framing` when the subject covers at least 60% of
/// the frame, `none` otherwise.
pub fn assessment_text(p: &AestheticParams) -> Assessment {
    let sat = if p.saturation < 0.4 {
        "undersaturated"
    } else if p.saturation > 0.9 {
        "oversaturated"
    } else {
        "well-saturated"
    };
    let light = if p.brightness < 0.35 {
        "poor light"
    } else if p.brightness > 0.85 {
        "bright light"
    } else {
        "balanced light"
    };
    let tone = if (0.45..0.95).contains(&p.hue_shift) {
        "cool tone"
    } else if p.hue_shift >= 0.2 {
        "neutral tone"
    } else {
        "warm tone"
    };
    let focus = if p.blur > 0.5 { "soft focus" } else { "sharp focus" };
    let shot = if p.size > 0.5 {
        "close-up"
    } else if p.size < 0.15 {
        "wide shot"
    } else {
        "medium shot"
    };
    let comp = if thirds_distance(p.cx, p.cy) < 0.1 {
        "rule-of-thirds composition"
    } else if (p.cx - 0.5).hypot(p.cy - 0.5) < 0.1 {
        "centered composition"
    } else {
        "off-balance composition"
    };
    let technique = if (p.cx - 0.5).abs() < 0.05 {
        "symmetry"
    } else if p.size >= 0.6 {
        "framing"
    } else {
        "none"
    };
    Assessment::new(
        vec![tok(sat), tok(light), tok(tone)],
        vec![tok(focus), tok(shot), tok(comp), tok(technique)],
    )
    .expect("token groups are fixed")
}

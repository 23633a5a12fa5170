use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conditioning::rgb_to_hsv_map;
use crate::pairing::{generate_scene, mos_unchecked, AestheticParams, SceneClass, SceneSpec, PALETTES};
use crate::raster::Image;

use super::EvalError;

/// Measurement-side mirror of the generator's aesthetic parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasuredStats {
    /// Mean HSV saturation over the image.
    pub saturation: f64,
    /// Mean HSV value over the image.
    pub value: f64,
    /// Mean HSV value outside the segmented subject (the whole image when
    /// segmentation fails).
    pub background_value: f64,
    /// Subject centroid, fractions of the image side.
    pub cx: f64,
    pub cy: f64,
    /// Subject area over image area.
    pub size: f64,
    /// Estimated blur σ over its 2-pixel range, in `[0, 1]`.
    pub blur: f64,
    /// Segmentation found no subject (centroid set to the centre, size 0).
    pub degenerate: bool,
}

impl MeasuredStats {
    pub fn blur_sigma(&self) -> f64 {
        2.0 * self.blur
    }

    /// Parameters the scoring oracle is applied to. Brightness is read from
    /// the background because the subject is rendered darker by design.
    pub fn as_params(&self) -> AestheticParams {
        AestheticParams {
            saturation: self.saturation.clamp(0.0, 1.0),
            brightness: self.background_value.clamp(0.0, 1.0),
            hue_shift: 0.0,
            cx: self.cx,
            cy: self.cy,
            blur: self.blur_sigma(),
            size: self.size.max(f64::MIN_POSITIVE),
        }
    }
}

/// Smallest value deviation treated as a subject; below it the image is
/// considered flat. Ten 8-bit quantization levels.
const MIN_CONTRAST: f64 = 10.0 / 255.0;
const OTSU_BINS: usize = 64;

/// Threshold maximizing between-class variance of `values` on `[0, max]`.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    let mut hist = [0usize; OTSU_BINS];
    for &v in values {
        let b = ((v / max) * OTSU_BINS as f64) as usize;
        hist[b.min(OTSU_BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let centre = |b: usize| (b as f64 + 0.5) / OTSU_BINS as f64 * max;
    let sum_all: f64 = hist.iter().enumerate().map(|(b, &n)| n as f64 * centre(b)).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0, -1.0);
    for (b, &n) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += n as f64;
        sum0 += n as f64 * centre(b);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let var = w0 * w1 * (m0 - m1).powi(2);
        if var > best_var {
            best_var = var;
            best = b;
        }
    }
    (best + 1) as f64 / OTSU_BINS as f64 * max
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Subject segmentation: Otsu threshold on the absolute HSV-value deviation
/// from the border median. Returns the mask and whether it is degenerate.
pub fn segment(image: &Image) -> Result<(Vec<bool>, bool), EvalError> {
    let hsv = rgb_to_hsv_map(image)?;
    Ok(segment_value(hsv.value(), image.height(), image.width()))
}

fn segment_value(value: &[f32], h: usize, w: usize) -> (Vec<bool>, bool) {
    let mut border = Vec::with_capacity(2 * (h + w));
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                border.push(value[y * w + x] as f64);
            }
        }
    }
    let bg = median(border);
    let dev: Vec<f64> = value.iter().map(|&v| (v as f64 - bg).abs()).collect();
    let max = dev.iter().copied().fold(0.0, f64::max);
    if max < MIN_CONTRAST {
        return (vec![false; dev.len()], true);
    }
    let thr = otsu_threshold(&dev);
    let mask: Vec<bool> = dev.iter().map(|&d| d >= thr).collect();
    let count = mask.iter().filter(|&&m| m).count();
    let degenerate = count == 0 || count == mask.len();
    (mask, degenerate)
}

pub fn measure_stats(image: &Image) -> Result<MeasuredStats, EvalError> {
    let hsv = rgb_to_hsv_map(image)?;
    let (h, w) = (image.height(), image.width());
    let n = (h * w) as f64;
    let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let saturation = mean(hsv.saturation());
    let value = mean(hsv.value());
    let (mask, degenerate) = segment_value(hsv.value(), h, w);

    let (mut cx, mut cy, mut count) = (0.0, 0.0, 0usize);
    let (mut bg_sum, mut bg_count) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask[i] && !degenerate {
                cx += (x as f64 + 0.5) / w as f64;
                cy += (y as f64 + 0.5) / h as f64;
                count += 1;
            } else {
                bg_sum += hsv.value()[i] as f64;
                bg_count += 1;
            }
        }
    }
    let (cx, cy, size) = if count == 0 {
        (0.5, 0.5, 0.0)
    } else {
        (cx / count as f64, cy / count as f64, count as f64 / n)
    };
    let background_value = if bg_count == 0 { value } else { bg_sum / bg_count as f64 };
    Ok(MeasuredStats {
        saturation,
        value,
        background_value,
        cx,
        cy,
        size,
        blur: estimate_blur(image)? / 2.0,
        degenerate,
    })
}

/// Transition pixels per unit of subject boundary.
///
/// With background and subject value levels taken from the segmentation, a
/// pixel is in transition when its normalized level lies strictly inside
/// `(0.1, 0.9)`. Sharp renders have none; blur widens every edge in
/// proportion to σ. Returns 0 for degenerate segmentations.
pub fn edge_width(image: &Image) -> Result<f64, EvalError> {
    let hsv = rgb_to_hsv_map(image)?;
    let (h, w) = (image.height(), image.width());
    Ok(edge_width_of(hsv.value(), h, w))
}

fn edge_width_of(value: &[f32], h: usize, w: usize) -> f64 {
    let (mask, degenerate) = segment_value(value, h, w);
    if degenerate {
        return 0.0;
    }
    let level = |inside: bool| median(value.iter().zip(&mask).filter(|(_, &m)| m == inside).map(|(&v, _)| v as f64).collect());
    let (bg, subject) = (level(false), level(true));
    if (bg - subject).abs() < MIN_CONTRAST {
        return 0.0;
    }
    let transition = value
        .iter()
        .filter(|&&v| {
            let t = (v as f64 - subject) / (bg - subject);
            t > 0.1 && t < 0.9
        })
        .count();
    let mut boundary = 0usize;
    for y in 0..h {
        for x in 0..w {
            let m = mask[y * w + x];
            if x + 1 < w && mask[y * w + x + 1] != m {
                boundary += 1;
            }
            if y + 1 < h && mask[(y + 1) * w + x] != m {
                boundary += 1;
            }
        }
    }
    transition as f64 / boundary.max(1) as f64
}

/// Median edge width per generator blur σ.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurCalibration {
    pub sigmas: Vec<f64>,
    pub widths: Vec<f64>,
}

impl BlurCalibration {
    /// Piecewise-linear inverse of the (monotone) width curve, clamped to the
    /// calibrated σ range.
    pub fn sigma_for(&self, width: f64) -> f64 {
        let (s, r) = (&self.sigmas, &self.widths);
        if width <= r[0] {
            return s[0];
        }
        for i in 1..r.len() {
            if width <= r[i] {
                let f = if r[i] > r[i - 1] { (width - r[i - 1]) / (r[i] - r[i - 1]) } else { 1.0 };
                return s[i - 1] + f * (s[i] - s[i - 1]);
            }
        }
        *s.last().expect("non-empty calibration")
    }
}

pub const CALIBRATION_SCENES: usize = 40;
const CALIBRATION_SEED: u64 = 0x0B1A_2C0D;

/// Width curve fitted once on generated 32-pixel scenes at known σ.
pub fn calibrate_blur(scenes: usize, seed: u64) -> Result<BlurCalibration, EvalError> {
    let sigmas: Vec<f64> = (0..=8).map(|i| 0.25 * i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(scenes);
    for _ in 0..scenes {
        let spec = SceneSpec {
            class: SceneClass::ALL[rng.random_range(0..SceneClass::ALL.len())],
            layout_seed: rng.random(),
            palette: rng.random_range(0..PALETTES.len()),
        };
        let params = AestheticParams {
            saturation: rng.random_range(0.3..=1.0),
            brightness: rng.random_range(0.3..=1.0),
            hue_shift: rng.random_range(0.0..1.0),
            cx: rng.random_range(0.3..0.7),
            cy: rng.random_range(0.3..0.7),
            blur: 0.0,
            size: rng.random_range(0.08..spec.class.max_size()),
        };
        specs.push((spec, params));
    }
    let mut widths = Vec::with_capacity(sigmas.len());
    for &sigma in &sigmas {
        let mut r = Vec::with_capacity(scenes);
        for (spec, params) in &specs {
            let p = AestheticParams { blur: sigma, ..*params };
            let (img, _) = generate_scene(spec, &p, 32)?;
            r.push(edge_width(&img)?);
        }
        widths.push(median(r));
    }
    // enforce monotonicity so the inverse is well defined
    for i in 1..widths.len() {
        widths[i] = widths[i].max(widths[i - 1]);
    }
    Ok(BlurCalibration { sigmas, widths })
}

pub fn blur_calibration() -> &'static BlurCalibration {
    static CAL: OnceLock<BlurCalibration> = OnceLock::new();
    CAL.get_or_init(|| calibrate_blur(CALIBRATION_SCENES, CALIBRATION_SEED).expect("calibration scenes render"))
}

/// Blur σ estimate in pixels, `[0, 2]`.
pub fn estimate_blur(image: &Image) -> Result<f64, EvalError> {
    Ok(blur_calibration().sigma_for(edge_width(image)?))
}

/// Aesthetic proxy score in `[1, 10]`: the parametric score of the measured
/// statistics.
pub fn pas_score(image: &Image) -> Result<f64, EvalError> {
    Ok(mos_unchecked(&measure_stats(image)?.as_params()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScsScore {
    pub score: f64,
    pub iou: f64,
    pub ncc: f64,
    /// Segmentation of the generated image failed; the IoU term is 0.
    pub degenerate: bool,
}

pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Zero-mean normalized cross-correlation; 0 when either side is constant.
pub fn ncc(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        ab += dx * dy;
        aa += dx * dx;
        bb += dy * dy;
    }
    let denom = (aa * bb).sqrt();
    if denom < 1e-12 {
        0.0
    } else {
        ab / denom
    }
}

/// Content consistency in `[0, 1]`: half mask IoU between the generated
/// image's segmentation and the input mask, half clipped grayscale NCC.
pub fn scs_score(generated: &Image, input: &Image, input_mask: &Image) -> Result<ScsScore, EvalError> {
    let dims = |i: &Image| (i.height(), i.width());
    if dims(generated) != dims(input) || dims(input) != dims(input_mask) {
        return Err(EvalError::Size(format!(
            "generated {:?}, input {:?}, mask {:?}",
            dims(generated),
            dims(input),
            dims(input_mask)
        )));
    }
    let (seg, degenerate) = segment(generated)?;
    let reference: Vec<bool> = input_mask.plane(0).iter().map(|&v| v >= 0.5).collect();
    let iou = if degenerate { 0.0 } else { mask_iou(&seg, &reference) };
    let ncc = ncc(generated.gray().data(), input.gray().data());
    Ok(ScsScore {
        score: 0.5 * iou + 0.5 * ncc.max(0.0),
        iou,
        ncc,
        degenerate,
    })
}

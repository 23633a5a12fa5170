use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{hsv_to_rgb, rgb_to_hsv};
use crate::raster::Image;

use super::params::AestheticParams;
use super::PairingError;

/// Semantic scene classes. A class fixes the subject's shape set and the
/// caption; layout seed and palette vary within a class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneClass {
    CircleOnHorizon,
    TriangleCluster,
    RectGrid,
    Crescent,
    Star,
    Ring,
    Diamond,
    Cross,
    Arch,
    Ellipse,
    TwinDisks,
    Tower,
    Kite,
    Hexagon,
    Bowtie,
    Chevron,
    Pillars,
    DotRing,
    StackedBlocks,
    Pinwheel,
}

impl SceneClass {
    pub const ALL: [SceneClass; 20] = [
        SceneClass::CircleOnHorizon,
        SceneClass::TriangleCluster,
        SceneClass::RectGrid,
        SceneClass::Crescent,
        SceneClass::Star,
        SceneClass::Ring,
        SceneClass::Diamond,
        SceneClass::Cross,
        SceneClass::Arch,
        SceneClass::Ellipse,
        SceneClass::TwinDisks,
        SceneClass::Tower,
        SceneClass::Kite,
        SceneClass::Hexagon,
        SceneClass::Bowtie,
        SceneClass::Chevron,
        SceneClass::Pillars,
        SceneClass::DotRing,
        SceneClass::StackedBlocks,
        SceneClass::Pinwheel,
    ];

    /// Position in [`SceneClass::ALL`]; doubles as the caption id.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            SceneClass::CircleOnHorizon => "circle-on-horizon",
            SceneClass::TriangleCluster => "triangle-cluster",
            SceneClass::RectGrid => "rect-grid",
            SceneClass::Crescent => "crescent",
            SceneClass::Star => "star",
            SceneClass::Ring => "ring",
            SceneClass::Diamond => "diamond",
            SceneClass::Cross => "cross",
            SceneClass::Arch => "arch",
            SceneClass::Ellipse => "ellipse",
            SceneClass::TwinDisks => "twin-disks",
            SceneClass::Tower => "tower",
            SceneClass::Kite => "kite",
            SceneClass::Hexagon => "hexagon",
            SceneClass::Bowtie => "bowtie",
            SceneClass::Chevron => "chevron",
            SceneClass::Pillars => "pillars",
            SceneClass::DotRing => "dot-ring",
            SceneClass::StackedBlocks => "stacked-blocks",
            SceneClass::Pinwheel => "pinwheel",
        }
    }

    pub fn from_key(key: &str) -> Option<SceneClass> {
        Self::ALL.into_iter().find(|c| c.key() == key)
    }

    pub fn caption(self) -> &'static str {
        match self {
            SceneClass::CircleOnHorizon => "a round sun above a flat horizon",
            SceneClass::TriangleCluster => "a cluster of three triangles",
            SceneClass::RectGrid => "four square tiles in a grid",
            SceneClass::Crescent => "a crescent moon in an open sky",
            SceneClass::Star => "a five-pointed star",
            SceneClass::Ring => "a single ring with an empty centre",
            SceneClass::Diamond => "a tall diamond",
            SceneClass::Cross => "a plus-shaped cross",
            SceneClass::Arch => "a stone arch over the horizon",
            SceneClass::Ellipse => "a wide flat ellipse",
            SceneClass::TwinDisks => "two disks side by side",
            SceneClass::Tower => "a tower with a pointed roof on the horizon",
            SceneClass::Kite => "a kite floating in the air",
            SceneClass::Hexagon => "a hexagonal tile",
            SceneClass::Bowtie => "a bowtie of two triangles",
            SceneClass::Chevron => "a chevron pointing down",
            SceneClass::Pillars => "three pillars standing on the horizon",
            SceneClass::DotRing => "eight dots arranged in a circle",
            SceneClass::StackedBlocks => "a stack of blocks narrowing upward",
            SceneClass::Pinwheel => "a pinwheel with four blades",
        }
    }

    /// Largest subject fraction the class can cover near the frame centre
    /// without its outline leaving the image.
    pub fn max_size(self) -> f64 {
        match self {
            SceneClass::CircleOnHorizon
            | SceneClass::Crescent
            | SceneClass::Ring
            | SceneClass::Diamond
            | SceneClass::Hexagon
            | SceneClass::Ellipse
            | SceneClass::Kite
            | SceneClass::RectGrid => 0.6,
            _ => 0.3,
        }
    }

    /// Subject fraction small enough to sit on any thirds intersection
    /// without clipping.
    pub fn ideal_size(self) -> f64 {
        0.25f64.min(self.max_size() / 3.0)
    }

    fn has_horizon(self) -> bool {
        matches!(
            self,
            SceneClass::CircleOnHorizon | SceneClass::Arch | SceneClass::Tower | SceneClass::Pillars
        )
    }
}

pub const PALETTES: [(f64, f64); 8] = [
    (0.58, 0.05),
    (0.10, 0.62),
    (0.33, 0.95),
    (0.75, 0.15),
    (0.50, 0.00),
    (0.15, 0.70),
    (0.90, 0.40),
    (0.02, 0.55),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub class: SceneClass,
    pub layout_seed: u64,
    pub palette: usize,
}

pub const SIDES: [usize; 3] = [32, 48, 64];

/// Base-render value of subject pixels; the background renders at value 1.
pub const SUBJECT_VALUE: f64 = 0.7;

#[derive(Clone, Debug)]
enum Prim {
    Disk { c: (f64, f64), r: f64 },
    Ring { c: (f64, f64), r_in: f64, r_out: f64 },
    Rect { c: (f64, f64), hw: f64, hh: f64 },
    Ellipse { c: (f64, f64), rx: f64, ry: f64 },
    Poly(Vec<(f64, f64)>),
}

impl Prim {
    fn contains(&self, u: f64, v: f64) -> bool {
        match self {
            Prim::Disk { c, r } => (u - c.0).hypot(v - c.1) <= *r,
            Prim::Ring { c, r_in, r_out } => {
                let d = (u - c.0).hypot(v - c.1);
                d >= *r_in && d <= *r_out
            }
            Prim::Rect { c, hw, hh } => (u - c.0).abs() <= *hw && (v - c.1).abs() <= *hh,
            Prim::Ellipse { c, rx, ry } => {
                let (a, b) = ((u - c.0) / rx, (v - c.1) / ry);
                a * a + b * b <= 1.0
            }
            Prim::Poly(pts) => {
                let mut inside = false;
                let mut j = pts.len() - 1;
                for i in 0..pts.len() {
                    let (xi, yi) = pts[i];
                    let (xj, yj) = pts[j];
                    if (yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }
}

/// Subject outline in unit-scale local coordinates (y grows downward).
struct Shape {
    add: Vec<Prim>,
    sub: Vec<Prim>,
    angle: f64,
}

impl Shape {
    fn contains(&self, u: f64, v: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (c * u + s * v, -s * u + c * v);
        self.add.iter().any(|p| p.contains(u, v)) && !self.sub.iter().any(|p| p.contains(u, v))
    }
}

fn regular(n: usize, r: f64, phase: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

fn tri(c: (f64, f64), s: f64, up: bool) -> Prim {
    let d = if up { -1.0 } else { 1.0 };
    Prim::Poly(vec![(c.0, c.1 + d * s), (c.0 + s, c.1 - d * s * 0.7), (c.0 - s, c.1 - d * s * 0.7)])
}

fn shape_for(spec: &SceneSpec) -> Shape {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.layout_seed ^ 0x5CE7_E5EE_D000_0000);
    let mut jitter = |amount: f64| rng.random_range(-amount..=amount);
    let angle = jitter(0.35);
    let add = match spec.class {
        SceneClass::CircleOnHorizon => vec![Prim::Disk { c: (0.0, 0.0), r: 1.0 }],
        SceneClass::TriangleCluster => vec![
            tri((-0.9 + jitter(0.1), 0.5 + jitter(0.1)), 0.7, true),
            tri((0.9 + jitter(0.1), 0.5 + jitter(0.1)), 0.7, true),
            tri((jitter(0.1), -0.7 + jitter(0.1)), 0.7, true),
        ],
        SceneClass::RectGrid => [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
            .iter()
            .map(|&(x, y)| Prim::Rect {
                c: (0.55 * x, 0.55 * y),
                hw: 0.4,
                hh: 0.4,
            })
            .collect(),
        SceneClass::Crescent => vec![Prim::Disk { c: (0.0, 0.0), r: 1.0 }],
        SceneClass::Star => {
            let outer = regular(5, 1.0, -std::f64::consts::FRAC_PI_2);
            let inner = regular(5, 0.42, -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI / 5.0);
            vec![Prim::Poly(outer.into_iter().zip(inner).flat_map(|(a, b)| [a, b]).collect())]
        }
        SceneClass::Ring => vec![Prim::Ring {
            c: (0.0, 0.0),
            r_in: 0.55,
            r_out: 1.0,
        }],
        SceneClass::Diamond => vec![Prim::Poly(vec![(0.0, -1.2), (0.75, 0.0), (0.0, 1.2), (-0.75, 0.0)])],
        SceneClass::Cross => vec![
            Prim::Rect { c: (0.0, 0.0), hw: 1.0, hh: 0.3 },
            Prim::Rect { c: (0.0, 0.0), hw: 0.3, hh: 1.0 },
        ],
        SceneClass::Arch => vec![Prim::Ring {
            c: (0.0, 0.3),
            r_in: 0.6,
            r_out: 1.0,
        }],
        SceneClass::Ellipse => vec![Prim::Ellipse {
            c: (0.0, 0.0),
            rx: 1.3,
            ry: 0.65,
        }],
        SceneClass::TwinDisks => {
            let gap = 0.7 + jitter(0.08);
            vec![
                Prim::Disk { c: (-gap, 0.0), r: 0.6 },
                Prim::Disk { c: (gap, 0.0), r: 0.6 },
            ]
        }
        SceneClass::Tower => vec![
            Prim::Rect { c: (0.0, 0.3), hw: 0.35, hh: 1.0 },
            Prim::Poly(vec![(0.0, -1.3), (0.55, -0.7), (-0.55, -0.7)]),
        ],
        SceneClass::Kite => vec![Prim::Poly(vec![(0.0, -1.3), (0.7, -0.2), (0.0, 1.0), (-0.7, -0.2)])],
        SceneClass::Hexagon => vec![Prim::Poly(regular(6, 1.0, 0.0))],
        SceneClass::Bowtie => vec![
            Prim::Poly(vec![(0.0, 0.0), (-1.1, -0.7), (-1.1, 0.7)]),
            Prim::Poly(vec![(0.0, 0.0), (1.1, -0.7), (1.1, 0.7)]),
        ],
        SceneClass::Chevron => vec![Prim::Poly(vec![
            (-1.0, -0.6),
            (-0.6, -0.6),
            (0.0, 0.2),
            (0.6, -0.6),
            (1.0, -0.6),
            (0.0, 0.8),
        ])],
        SceneClass::Pillars => (-1..=1)
            .map(|i| Prim::Rect {
                c: (0.8 * i as f64, 0.0),
                hw: 0.2,
                hh: 1.0 + jitter(0.15),
            })
            .collect(),
        SceneClass::DotRing => regular(8, 1.0, 0.0)
            .into_iter()
            .map(|c| Prim::Disk { c, r: 0.28 })
            .collect(),
        SceneClass::StackedBlocks => (0..3)
            .map(|i| Prim::Rect {
                c: (jitter(0.05), 0.6 - 0.55 * i as f64),
                hw: 1.0 - 0.3 * i as f64,
                hh: 0.27,
            })
            .collect(),
        SceneClass::Pinwheel => (0..4)
            .map(|i| {
                let a = std::f64::consts::FRAC_PI_2 * i as f64;
                let p = |r: f64, da: f64| (r * (a + da).cos(), r * (a + da).sin());
                Prim::Poly(vec![(0.0, 0.0), p(1.1, 0.0), p(0.8, 0.6)])
            })
            .collect(),
    };
    let sub = match spec.class {
        SceneClass::Crescent => vec![Prim::Disk {
            c: (0.45 + jitter(0.05), -0.2),
            r: 0.85,
        }],
        SceneClass::Arch => vec![Prim::Rect {
            c: (0.0, 0.8),
            hw: 1.2,
            hh: 0.5,
        }],
        _ => vec![],
    };
    Shape { add, sub, angle }
}

/// Mask of `shape` scaled by `scale` pixels with its local origin at
/// `origin`, sampled at pixel centres.
fn rasterize(shape: &Shape, side: usize, scale: f64, origin: (f64, f64)) -> Vec<bool> {
    let mut mask = vec![false; side * side];
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 + 0.5 - origin.0) / scale;
            let v = (y as f64 + 0.5 - origin.1) / scale;
            mask[y * side + x] = shape.contains(u, v);
        }
    }
    mask
}

/// Centroid and area of the unit-scale shape on a fine grid.
fn local_moments(shape: &Shape) -> ((f64, f64), f64) {
    const N: usize = 256;
    const EXTENT: f64 = 2.0;
    let step = 2.0 * EXTENT / N as f64;
    let (mut sx, mut sy, mut count) = (0.0, 0.0, 0usize);
    for j in 0..N {
        for i in 0..N {
            let u = -EXTENT + (i as f64 + 0.5) * step;
            let v = -EXTENT + (j as f64 + 0.5) * step;
            if shape.contains(u, v) {
                sx += u;
                sy += v;
                count += 1;
            }
        }
    }
    let n = count.max(1) as f64;
    ((sx / n, sy / n), count as f64 * step * step)
}

/// Renders `spec` under `params` at `side × side`.
///
/// Returns the RGB image (8-bit quantized, in `[0, 1]`) and the one-channel
/// subject mask taken before blurring.
pub fn generate_scene(spec: &SceneSpec, params: &AestheticParams, side: usize) -> Result<(Image, Image), PairingError> {
    if !SIDES.contains(&side) {
        return Err(PairingError::Spec(format!("side {side} not in {SIDES:?}")));
    }
    if spec.palette >= PALETTES.len() {
        return Err(PairingError::Spec(format!("palette {} out of range", spec.palette)));
    }
    params.validate()?;
    let shape = shape_for(spec);
    let (centroid, unit_area) = local_moments(&shape);
    let target = params.size * (side * side) as f64;
    let area = |bits: &[bool]| bits.iter().filter(|&&m| m).count() as f64;
    // Frame clipping moves the visible centroid away from the unclipped one,
    // so the offset is corrected on the visible mask and the scale refitted.
    let mut offset = (0.0, 0.0);
    let mut mask_bits = Vec::new();
    for _ in 0..6 {
        let place = |scale: f64| {
            let origin = (
                params.cx * side as f64 - scale * centroid.0 + offset.0,
                params.cy * side as f64 - scale * centroid.1 + offset.1,
            );
            rasterize(&shape, side, scale, origin)
        };
        let scale = fit_scale(&place, &area, target, (target / unit_area).sqrt());
        mask_bits = place(scale);
        let Some((mx, my)) = visible_centroid(&mask_bits, side) else { break };
        let err = (params.cx * side as f64 - mx, params.cy * side as f64 - my);
        if err.0.hypot(err.1) < 0.05 {
            break;
        }
        offset = (offset.0 + err.0, offset.1 + err.1);
    }

    let (bg_hue, subj_hue) = PALETTES[spec.palette];
    let horizon = if spec.class.has_horizon() { 0.68 } else { f64::INFINITY };
    let mut img = Image::filled(3, side, side, 0.0);
    let mut mask = Image::filled(1, side, side, 0.0);
    for y in 0..side {
        let fy = (y as f64 + 0.5) / side as f64;
        for x in 0..side {
            let i = y * side + x;
            let (h, v) = if mask_bits[i] {
                mask.set(0, y, x, 1.0);
                (subj_hue, SUBJECT_VALUE)
            } else {
                let ground = if fy > horizon { 0.12 } else { 0.0 };
                (bg_hue + 0.08 * fy + ground, 1.0)
            };
            let (r, g, b) = hsv_to_rgb(h, 1.0, v);
            img.set(0, y, x, r as f32);
            img.set(1, y, x, g as f32);
            img.set(2, y, x, b as f32);
        }
    }
    let adjusted = adjust_hsv(&img, params.hue_shift, params.saturation, params.brightness);
    Ok((gaussian_blur(&adjusted, params.blur).quantized(), mask))
}

/// Scale whose rasterized area is closest to `target`.
///
/// Area is only monotone in scale over moderate ranges: ring-like and
/// multi-part subjects can leave the frame inside a hole when scaled far up.
/// Scan geometrically for the first scale reaching the target, then bisect
/// inside that step.
fn fit_scale(
    place: &impl Fn(f64) -> Vec<bool>,
    area: &impl Fn(&[bool]) -> f64,
    target: f64,
    guess: f64,
) -> f64 {
    let mut prev = 0.5 * guess;
    let mut best = (f64::INFINITY, prev);
    let mut crossing = None;
    for k in 1..=60 {
        let scale = 0.5 * guess * 1.04f64.powi(k);
        let a = area(&place(scale));
        if (a - target).abs() < best.0 {
            best = ((a - target).abs(), scale);
        }
        if a >= target {
            crossing = Some((prev, scale));
            break;
        }
        prev = scale;
    }
    match crossing {
        Some((mut lo, mut hi)) => {
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if area(&place(mid)) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if target - area(&place(lo)) <= area(&place(hi)) - target {
                lo
            } else {
                hi
            }
        }
        None => best.1,
    }
}

/// Pixel-centre centroid of a mask, in pixels.
fn visible_centroid(bits: &[bool], side: usize) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        sx += (i % side) as f64 + 0.5;
        sy += (i / side) as f64 + 0.5;
        n += 1;
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// Rotates hue by `shift` and scales saturation and value.
pub fn adjust_hsv(img: &Image, shift: f64, sat: f64, val: f64) -> Image {
    if shift == 0.0 && sat == 1.0 && val == 1.0 {
        return img.clone();
    }
    let mut out = img.clone();
    for i in 0..img.pixels() {
        let (h, s, v) = rgb_to_hsv(img.plane(0)[i] as f64, img.plane(1)[i] as f64, img.plane(2)[i] as f64);
        let (r, g, b) = hsv_to_rgb(h + shift, s * sat, v * val);
        out.plane_mut(0)[i] = r as f32;
        out.plane_mut(1)[i] = g as f32;
        out.plane_mut(2)[i] = b as f32;
    }
    out
}

/// Separable Gaussian blur with replicate border; `sigma = 0` is the identity.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let (h, w) = (img.height() as isize, img.width() as isize);
    let mut tmp = img.clone();
    let mut out = img.clone();
    for c in 0..img.channels() {
        for y in 0..h {
            for x in 0..w {
                let acc: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wk)| wk * img.get(c, y as usize, (x + k as isize - radius).clamp(0, w - 1) as usize) as f64)
                    .sum();
                tmp.set(c, y as usize, x as usize, acc as f32);
            }
        }
        for y in 0..h {
            for x in 0..w {
                let acc: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wk)| wk * tmp.get(c, (y + k as isize - radius).clamp(0, h - 1) as usize, x as usize) as f64)
                    .sum();
                out.set(c, y as usize, x as usize, acc as f32);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(class: SceneClass) -> SceneSpec {
        SceneSpec {
            class,
            layout_seed: 7,
            palette: 2,
        }
    }

    fn identity() -> AestheticParams {
        AestheticParams {
            saturation: 1.0,
            brightness: 1.0,
            hue_shift: 0.0,
            cx: 0.5,
            cy: 0.5,
            blur: 0.0,
            size: 0.3,
        }
    }

    #[test]
    fn identity_params_reproduce_base_render() {
        let s = spec(SceneClass::Star);
        let (img, mask) = generate_scene(&s, &identity(), 32).unwrap();
        let base = adjust_hsv(&img, 0.0, 1.0, 1.0);
        assert_eq!(img, base);
        // every pixel of the base render is fully saturated; background at value 1
        for i in 0..img.pixels() {
            let (_, sat, v) = rgb_to_hsv(img.plane(0)[i] as f64, img.plane(1)[i] as f64, img.plane(2)[i] as f64);
            assert!(sat > 0.99);
            let want = if mask.data()[i] > 0.5 { SUBJECT_VALUE } else { 1.0 };
            assert!((v - want).abs() < 2.0 / 255.0);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = AestheticParams { blur: 1.3, ..AestheticParams::ideal() };
        for class in SceneClass::ALL {
            let a = generate_scene(&spec(class), &p, 48).unwrap();
            let b = generate_scene(&spec(class), &p, 48).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mask_area_tracks_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut bad = Vec::new();
        for i in 0..200 {
            let class = SceneClass::ALL[i % 20];
            let size = rng.random_range(0.06..class.max_size());
            let margin = 0.25 + 0.25 * size;
            let p = AestheticParams {
                size,
                cx: rng.random_range(margin..1.0 - margin),
                cy: rng.random_range(margin..1.0 - margin),
                ..AestheticParams::ideal()
            };
            let s = SceneSpec {
                class,
                layout_seed: rng.random(),
                palette: i % 8,
            };
            let (_, mask) = generate_scene(&s, &p, 32).unwrap();
            let frac = mask.mean();
            if (frac - p.size).abs() > 0.1 * p.size {
                bad.push(format!("{class:?}: {frac} vs {p:?}"));
            }
        }
        assert!(bad.is_empty(), "{bad:#?}");
    }

    #[test]
    fn rejects_invalid_specs() {
        let p = AestheticParams::ideal();
        assert!(generate_scene(&spec(SceneClass::Ring), &p, 40).is_err());
        let bad = SceneSpec { palette: 99, ..spec(SceneClass::Ring) };
        assert!(generate_scene(&bad, &p, 32).is_err());
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let img = Image::filled(3, 9, 9, 0.4);
        assert!(gaussian_blur(&img, 1.5).max_abs_diff(&img) < 1e-6);
        let mut dot = Image::filled(1, 15, 15, 0.0);
        dot.set(0, 7, 7, 1.0);
        let b = gaussian_blur(&dot, 1.0);
        assert!((b.mean() * 225.0 - 1.0).abs() < 1e-5);
        assert!(b.get(0, 7, 7) < 0.2);
    }

    #[test]
    fn keys_round_trip() {
        for c in SceneClass::ALL {
            assert_eq!(SceneClass::from_key(c.key()), Some(c));
            assert_eq!(SceneClass::ALL[c.index()], c);
        }
    }
}

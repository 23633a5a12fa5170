use crate::raster::Image;

use super::ConditioningError;

/// Three-channel hue / saturation / value map, every channel in `[0, 1]`.
///
/// Hue is scaled from degrees to `[0, 1)`; achromatic pixels get hue 0.
#[derive(Clone, Debug, PartialEq)]
pub struct HsvMap(Image);

impl HsvMap {
    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn hue(&self) -> &[f32] {
        self.0.plane(0)
    }

    pub fn saturation(&self) -> &[f32] {
        self.0.plane(1)
    }

    pub fn value(&self) -> &[f32] {
        self.0.plane(2)
    }
}

/// Piecewise RGB → HSV for one pixel. Returns `(h, s, v)` with `h ∈ [0, 1)`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, s, max);
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = sector / 6.0;
    if h >= 1.0 {
        h -= 1.0;
    }
    (h, s, max)
}

/// Inverse of [`rgb_to_hsv`]; `h` is taken modulo 1.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i64).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

pub fn rgb_to_hsv_map(image: &Image) -> Result<HsvMap, ConditioningError> {
    if image.channels() != 3 {
        return Err(ConditioningError::Channels {
            expected: 3,
            got: image.channels(),
        });
    }
    image.check_unit_range()?;
    let n = image.pixels();
    let mut out = Image::filled(3, image.height(), image.width(), 0.0);
    let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
    let mut hsv = vec![(0.0, 0.0, 0.0); n];
    for (i, px) in hsv.iter_mut().enumerate() {
        *px = rgb_to_hsv(r[i] as f64, g[i] as f64, b[i] as f64);
    }
    for c in 0..3 {
        let plane = out.plane_mut(c);
        for (dst, px) in plane.iter_mut().zip(&hsv) {
            let v = match c {
                0 => px.0,
                1 => px.1,
                _ => px.2,
            };
            *dst = v as f32;
        }
    }
    // f32 rounding can push a hue just below 1 up to exactly 1.0
    for h in out.plane_mut(0) {
        if *h >= 1.0 {
            *h = 0.0;
        }
    }
    Ok(HsvMap(out))
}

pub fn hsv_map_to_rgb(map: &HsvMap) -> Image {
    let img = map.image();
    let n = img.pixels();
    let mut out = Image::filled(3, img.height(), img.width(), 0.0);
    for i in 0..n {
        let (r, g, b) = hsv_to_rgb(map.hue()[i] as f64, map.saturation()[i] as f64, map.value()[i] as f64);
        out.plane_mut(0)[i] = r as f32;
        out.plane_mut(1)[i] = g as f32;
        out.plane_mut(2)[i] = b as f32;
    }
    out
}

use crate::raster::Image;

use super::ConditioningError;

/// One-channel edge-magnitude map in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContourMap(Image);

impl ContourMap {
    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn values(&self) -> &[f32] {
        self.0.data()
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }
}

/// Structure-map extractor used by the conditioning path.
pub trait ContourExtractor {
    fn extract(&self, image: &Image) -> Result<ContourMap, ConditioningError>;
}

/// Sobel gradient magnitude on luminance, replicate border, divided by `4√2`
/// (the largest magnitude reachable for inputs in `[0, 1]`).
#[derive(Clone, Copy, Debug, Default)]
pub struct Sobel;

const SOBEL_MAX: f64 = 4.0 * std::f64::consts::SQRT_2;

impl ContourExtractor for Sobel {
    fn extract(&self, image: &Image) -> Result<ContourMap, ConditioningError> {
        if image.channels() != 1 && image.channels() != 3 {
            return Err(ConditioningError::Channels {
                expected: 3,
                got: image.channels(),
            });
        }
        let gray = image.gray();
        let (h, w) = (gray.height(), gray.width());
        let src = gray.plane(0);
        let at = |y: isize, x: isize| -> f64 {
            let yy = y.clamp(0, h as isize - 1) as usize;
            let xx = x.clamp(0, w as isize - 1) as usize;
            src[yy * w + xx] as f64
        };
        let mut out = Image::filled(1, h, w, 0.0);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
                let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
                let m = ((gx * gx + gy * gy).sqrt() / SOBEL_MAX).min(1.0);
                out.set(0, y as usize, x as usize, m as f32);
            }
        }
        Ok(ContourMap(out))
    }
}

pub fn contour_map(image: &Image) -> Result<ContourMap, ConditioningError> {
    Sobel.extract(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Image {
        let mut img = Image::filled(1, h, w, 0.0);
        for y in 0..h {
            for x in 0..w {
                img.set(0, y, x, f(y, x));
            }
        }
        img
    }

    #[test]
    fn constant_image_is_exactly_zero() {
        for v in [0.0, 0.3, 1.0] {
            let img = Image::filled(3, 9, 7, v);
            assert!(contour_map(&img).unwrap().values().iter().all(|&m| m == 0.0));
        }
    }

    #[test]
    fn vertical_step_edge() {
        let img = gray(8, 10, |_, x| if x < 5 { 0.0 } else { 1.0 });
        let m = contour_map(&img).unwrap();
        let expected = (4.0 / SOBEL_MAX) as f32;
        for y in 0..8 {
            for x in 0..10 {
                let v = m.image().get(0, y, x);
                if x == 4 || x == 5 {
                    assert!((v - expected).abs() < 1e-7);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn hand_computed_patch() {
        // centre pixel of
        //   0.1 0.2 0.3
        //   0.4 0.5 0.6
        //   0.9 0.8 0.7
        let vals = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9, 0.8, 0.7];
        let img = gray(3, 3, |y, x| vals[y * 3 + x]);
        // gx = (0.3 + 1.2 + 0.7) - (0.1 + 0.8 + 0.9) = 0.4
        // gy = (0.9 + 1.6 + 0.7) - (0.1 + 0.4 + 0.3) = 2.4
        let expected = (0.4f64 * 0.4 + 2.4 * 2.4).sqrt() / (4.0 * 2f64.sqrt());
        let got = contour_map(&img).unwrap().image().get(0, 1, 1) as f64;
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    proptest! {
        #[test]
        fn bounded_and_translation_equivariant(
            seed in proptest::collection::vec(0.0f32..=1.0, 64)
        ) {
            let img = gray(8, 8, |y, x| seed[y * 8 + x]);
            let m = contour_map(&img).unwrap();
            prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
            // shift right by one pixel
            let shifted = gray(8, 9, |y, x| seed[y * 8 + x.saturating_sub(1).min(7)]);
            let ms = contour_map(&shifted).unwrap();
            for y in 1..7 {
                for x in 1..7 {
                    prop_assert_eq!(m.image().get(0, y, x), ms.image().get(0, y, x + 1));
                }
            }
        }
    }
}

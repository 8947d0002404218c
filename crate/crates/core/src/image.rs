//! RGB images with `f64` channels in `[0, 1]`, stored `H × W × 3`.

use std::path::Path;

use ndarray::Array3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Array3<f64>,
}

impl Image {
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::invalid(format!("image must be H x W x 3, got {h} x {w} x {c}")));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("image has non-finite pixels"));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        Ok(Image { pixels })
    }

    /// Skips range checks. The optimizer keeps pixels clamped itself.
    pub(crate) fn from_raw(pixels: Array3<f64>) -> Self {
        Image { pixels }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, 3), value))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut Array3<f64> {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    /// Decodes PNG or JPEG; 8-bit channels map to `v / 255`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Load {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        });
        Image { pixels }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let (h, w, _) = self.pixels.dim();
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| (self.pixels[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    /// Encodes as PNG or JPEG depending on the extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path.as_ref())?;
        Ok(())
    }

    /// Explicit resampling (Lanczos3); nothing else in the crate resizes images.
    pub fn resized(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("resize target must be non-empty"));
        }
        let out = image::imageops::resize(
            &self.to_rgb8(),
            width as u32,
            height as u32,
            image::imageops::FilterType::Lanczos3,
        );
        Ok(Self::from_rgb8(&out))
    }

    /// Scales so the longer side equals `max_side`, keeping the aspect ratio.
    pub fn resized_max_side(&self, max_side: usize) -> Result<Self> {
        let (h, w) = (self.height(), self.width());
        let long = h.max(w);
        if long == max_side {
            return Ok(self.clone());
        }
        let scale = max_side as f64 / long as f64;
        let nw = ((w as f64 * scale).round() as usize).max(1);
        let nh = ((h as f64 * scale).round() as usize).max(1);
        self.resized(nw, nh)
    }

    pub fn synthetic(pattern: Pattern, height: usize, width: usize, seed: u64) -> Self {
        synthesize(pattern, height, width, seed)
    }
}

/// Procedural test images for desk-scale runs and benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Smooth colour ramps with a few soft discs; a stand-in content image.
    Scene,
    /// Oriented colour stripes with high-frequency texture; a stand-in style image.
    Stripes,
    Checker,
    Noise,
}

fn synthesize(pattern: Pattern, h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fy = |y: usize| y as f64 / h.max(1) as f64;
    let fx = |x: usize| x as f64 / w.max(1) as f64;
    let pixels = match pattern {
        Pattern::Scene => {
            let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
                .map(|_| {
                    (
                        rng.random_range(0.2..0.8),
                        rng.random_range(0.2..0.8),
                        rng.random_range(0.08..0.25),
                        [
                            rng.random_range(0.0..1.0),
                            rng.random_range(0.0..1.0),
                            rng.random_range(0.0..1.0),
                        ],
                    )
                })
                .collect();
            Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                let (u, v) = (fx(x), fy(y));
                let mut val = match c {
                    0 => 0.2 + 0.6 * u,
                    1 => 0.3 + 0.5 * v,
                    _ => 0.5 + 0.3 * (u - v),
                };
                for (cx, cy, r, col) in &discs {
                    let d2 = ((u - cx).powi(2) + (v - cy).powi(2)) / (r * r);
                    let wgt = (-d2 * d2).exp();
                    val = val * (1.0 - wgt) + col[c] * wgt;
                }
                val.clamp(0.0, 1.0)
            })
        }
        Pattern::Stripes => {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let freq: f64 = rng.random_range(6.0..12.0);
            let phase: [f64; 3] = [
                rng.random_range(0.0..6.3),
                rng.random_range(0.0..6.3),
                rng.random_range(0.0..6.3),
            ];
            let (s, co) = angle.sin_cos();
            Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                let t = (fx(x) * co + fy(y) * s) * freq * std::f64::consts::TAU;
                let base = 0.5 + 0.45 * (t + phase[c]).sin().powi(3);
                let fine = 0.05 * ((fx(x) * 53.0 + fy(y) * 41.0) * std::f64::consts::TAU + c as f64).sin();
                (base + fine).clamp(0.0, 1.0)
            })
        }
        Pattern::Checker => {
            let cell = rng.random_range(4..9usize);
            Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                let on = ((y / cell) + (x / cell)) % 2 == 0;
                match (on, c) {
                    (true, 0) => 0.9,
                    (true, _) => 0.2,
                    (false, 2) => 0.8,
                    (false, _) => 0.1,
                }
            })
        }
        Pattern::Noise => Array3::from_shape_fn((h, w, 3), |_| rng.random_range(0.0..1.0)),
    };
    Image { pixels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(Image::new(Array3::zeros((4, 4, 2))).is_err());
        assert!(matches!(
            Image::new(Array3::from_elem((4, 4, 3), f64::NAN)),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            Image::new(Array3::from_elem((4, 4, 3), 1.5)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn png_round_trip_is_within_quantization() {
        let img = Image::synthetic(Pattern::Scene, 20, 30, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        img.save(&path).unwrap();
        let back = Image::load(&path).unwrap();
        assert_eq!((back.height(), back.width()), (20, 30));
        let err = (back.pixels() - img.pixels())
            .mapv(f64::abs)
            .fold(0.0f64, |a, b| a.max(*b));
        assert!(err <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn synthetic_images_are_deterministic_and_valid() {
        for p in [Pattern::Scene, Pattern::Stripes, Pattern::Checker, Pattern::Noise] {
            let a = Image::synthetic(p, 16, 24, 3);
            let b = Image::synthetic(p, 16, 24, 3);
            assert_eq!(a, b);
            assert!(Image::new(a.into_pixels()).is_ok());
        }
    }

    #[test]
    fn resize_to_max_side_keeps_aspect() {
        let img = Image::synthetic(Pattern::Checker, 40, 80, 0);
        let r = img.resized_max_side(40).unwrap();
        assert_eq!((r.height(), r.width()), (20, 40));
    }
}

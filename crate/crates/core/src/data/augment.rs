//! Label-preserving random image transforms for training batches.
//!
//! Flip, rotation, shift and zoom compose into a single affine map, so the
//! image is resampled exactly once (bilinear, nearest-edge fill). All draws
//! happen in a fixed order even when a magnitude is zero, which keeps the
//! consumed rng stream independent of the configuration values.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::image::sample_bilinear;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub horizontal_flip_prob: f64,
    pub rotation_deg_max: f64,
    pub shift_frac_max: f64,
    pub zoom_frac_max: f64,
    pub enabled: bool,
}

impl Default for AugmentConfig {
    /// Plausible transforms for clothing photographs; vertical flips are
    /// deliberately absent.
    fn default() -> Self {
        AugmentConfig {
            horizontal_flip_prob: 0.5,
            rotation_deg_max: 15.0,
            shift_frac_max: 0.1,
            zoom_frac_max: 0.1,
            enabled: true,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            horizontal_flip_prob: 0.0,
            rotation_deg_max: 0.0,
            shift_frac_max: 0.0,
            zoom_frac_max: 0.0,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return Err(Error::Parameter(format!(
                "flip probability must lie in [0, 1], got {}",
                self.horizontal_flip_prob
            )));
        }
        for (name, v) in [
            ("rotation_deg_max", self.rotation_deg_max),
            ("shift_frac_max", self.shift_frac_max),
            ("zoom_frac_max", self.zoom_frac_max),
        ] {
            if v < 0.0 {
                return Err(Error::Parameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.zoom_frac_max >= 1.0 {
            return Err(Error::Parameter(format!(
                "zoom_frac_max must be < 1 so the scale stays positive, got {}",
                self.zoom_frac_max
            )));
        }
        Ok(())
    }
}

/// Apply flip, rotation, shift and zoom (in that order) to a `[3,H,W]` image.
/// Output shape equals input shape; values stay in [0, 1].
pub fn augment(img: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Tensor<f32>> {
    cfg.validate()?;
    let [c, h, w] = match img.shape() {
        [c, h, w] => [*c, *h, *w],
        other => {
            return Err(Error::Dimension(format!(
                "augment expects [C,H,W], got {other:?}"
            )))
        }
    };
    if !cfg.enabled {
        return Ok(img.clone());
    }

    // fixed draw order: flip, rotation, shift x, shift y, zoom
    let flip = rng.next_f64() < cfg.horizontal_flip_prob;
    let theta = ((2.0 * rng.next_f64() - 1.0) * cfg.rotation_deg_max).to_radians();
    let dx = (2.0 * rng.next_f64() - 1.0) * cfg.shift_frac_max * w as f64;
    let dy = (2.0 * rng.next_f64() - 1.0) * cfg.shift_frac_max * h as f64;
    let scale = 1.0 + (2.0 * rng.next_f64() - 1.0) * cfg.zoom_frac_max;

    Ok(warp(img, c, h, w, flip, theta, dx, dy, scale))
}

#[allow(clippy::too_many_arguments)]
fn warp(
    img: &Tensor<f32>,
    c: usize,
    h: usize,
    w: usize,
    flip: bool,
    theta: f64,
    dx: f64,
    dy: f64,
    scale: f64,
) -> Tensor<f32> {
    let (sin_t, cos_t) = theta.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;

    let mut out = vec![0f32; c * h * w];
    for ch in 0..c {
        let plane = &img.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // invert the forward chain: zoom, then shift, then rotation,
                // then flip, all about the image center
                let ux = (x as f64 - cx) / scale - dx;
                let uy = (y as f64 - cy) / scale - dy;
                let mut sx = ux * cos_t + uy * sin_t;
                let sy = -ux * sin_t + uy * cos_t;
                if flip {
                    sx = -sx;
                }
                dst[y * w + x] = sample_bilinear(plane, h, w, sy + cy, sx + cx);
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("warp preserves shape")
}

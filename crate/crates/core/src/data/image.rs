//! Raster decoding and bilinear resampling.

use std::path::Path;

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clamped bilinear sample of one `[h, w]` plane at a fractional coordinate.
/// Coordinates outside the plane read the nearest edge pixel.
pub(crate) fn sample_bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = (y - y0 as f64) as f32;
    let fx = (x - x0 as f64) as f32;
    let p00 = plane[y0 * w + x0];
    let p01 = plane[y0 * w + x1];
    let p10 = plane[y1 * w + x0];
    let p11 = plane[y1 * w + x1];
    let top = p00 + (p01 - p00) * fx;
    let bottom = p10 + (p11 - p10) * fx;
    top + (bottom - top) * fy
}

/// Center-aligned bilinear resize of one channel plane.
pub(crate) fn resize_plane(src: &[f32], h: usize, w: usize, th: usize, tw: usize) -> Vec<f32> {
    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..tw {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            out.push(sample_bilinear(src, h, w, src_y, src_x));
        }
    }
    out
}

/// Decode an 8-bit RGB or RGBA raster into a `[3, H, W]` tensor with values
/// in [0, 1]. Alpha is dropped and the image is bilinearly resized when its
/// size differs from `target` (height, width).
pub fn load_image(path: &Path, target: (usize, usize)) -> Result<Tensor<f32>> {
    let decoded = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::ImageRead {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    })?;

    let rgb = match decoded {
        DynamicImage::ImageRgb8(img) => img,
        DynamicImage::ImageRgba8(img) => DynamicImage::ImageRgba8(img).to_rgb8(),
        other => {
            return Err(Error::ImageRead {
                path: path.to_path_buf(),
                detail: format!(
                    "unsupported pixel format {other:?}; expected 8-bit RGB or RGBA",
                ),
            })
        }
    };

    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    let mut planes = vec![0f32; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        planes[i] = px[0] as f32 / 255.0;
        planes[h * w + i] = px[1] as f32 / 255.0;
        planes[2 * h * w + i] = px[2] as f32 / 255.0;
    }

    let (th, tw) = target;
    if (h, w) == (th, tw) {
        return Tensor::new(vec![3, h, w], planes);
    }
    let mut resized = Vec::with_capacity(3 * th * tw);
    for c in 0..3 {
        resized.extend(resize_plane(&planes[c * h * w..(c + 1) * h * w], h, w, th, tw));
    }
    Tensor::new(vec![3, th, tw], resized)
}

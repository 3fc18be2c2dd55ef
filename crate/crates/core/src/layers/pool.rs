//! 2x2 stride-2 max pooling with floor semantics for odd edges.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::shape4;

#[derive(Debug, Clone)]
struct PoolCache {
    in_shape: [usize; 4],
    /// Flat input offset of each window's maximum; ties keep the first
    /// position in row-major window order.
    argmax: Vec<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct MaxPool2d {
    cache: Option<PoolCache>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        MaxPool2d { cache: None }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*c, h / 2, w / 2]),
            [_, h, w] => Err(Error::Dimension(format!(
                "maxpool needs H,W >= 2, got {h}x{w}"
            ))),
            other => Err(Error::Dimension(format!(
                "maxpool input must be [C,H,W], got {other:?}"
            ))),
        }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, cache: bool) -> Result<Tensor<T>> {
        let [n, c, h, w] = shape4(x, "maxpool")?;
        if h < 2 || w < 2 {
            return Err(Error::Dimension(format!(
                "maxpool needs H,W >= 2, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![T::ZERO; n * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        let data = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i0 = base + (2 * oy) * w + 2 * ox;
                    let candidates = [i0, i0 + 1, i0 + w, i0 + w + 1];
                    let mut best = candidates[0];
                    for &cand in &candidates[1..] {
                        if data[cand] > data[best] {
                            best = cand;
                        }
                    }
                    let oi = plane * oh * ow + oy * ow + ox;
                    out[oi] = data[best];
                    argmax[oi] = best as u32;
                }
            }
        }
        if cache {
            self.cache = Some(PoolCache {
                in_shape: [n, c, h, w],
                argmax,
            });
        }
        Tensor::new(vec![n, c, oh, ow], out)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("maxpool backward called before forward".into()))?;
        let [n, c, h, w] = cache.in_shape;
        if dy.numel() != cache.argmax.len() {
            return Err(Error::Dimension(format!(
                "maxpool backward: upstream gradient {:?} does not match cached output",
                dy.shape()
            )));
        }
        let mut dx = vec![T::ZERO; n * c * h * w];
        for (&pos, &g) in cache.argmax.iter().zip(dy.data()) {
            dx[pos as usize] += g;
        }
        Tensor::new(vec![n, c, h, w], dx)
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

//! 2-D convolution via im2col + GEMM, with an optionally fused ReLU.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::im2col::{col2im_into, im2col_into, out_dims};
use crate::rng::Rng;
use crate::tensor::{fill_random, matmul_into, matmul_nt_acc, matmul_tn_acc, Dist, Scalar, Tensor};

use super::shape4;

#[derive(Debug, Clone, Copy)]
pub struct Conv2dConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    /// Apply ReLU as part of the layer (VGG convs fuse their activation).
    pub fused_relu: bool,
}

impl Conv2dConfig {
    /// 3x3 stride-1 "same"-padded convolution with fused ReLU, as used by
    /// every VGG block.
    pub fn vgg3x3(in_channels: usize, out_channels: usize) -> Self {
        Conv2dConfig {
            in_channels,
            out_channels,
            kernel: (3, 3),
            stride: (1, 1),
            pad: (1, 1),
            fused_relu: true,
        }
    }
}

#[derive(Debug, Clone)]
struct ConvCache<T: Scalar> {
    x: Tensor<T>,
    /// 1 where the fused ReLU passed the value through, present only when fused.
    relu_mask: Option<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    cfg: Conv2dConfig,
    weight: Tensor<T>, // (Cout, Cin, kh, kw)
    bias: Tensor<T>,   // (Cout)
    dweight: Option<Tensor<T>>,
    dbias: Option<Tensor<T>>,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-normal weights (std = sqrt(2 / fan_in)), zero bias.
    pub fn init(cfg: Conv2dConfig, rng: &mut Rng) -> Result<Self> {
        let fan_in = cfg.in_channels * cfg.kernel.0 * cfg.kernel.1;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = fill_random(
            vec![cfg.out_channels, cfg.in_channels, cfg.kernel.0, cfg.kernel.1],
            Dist::Normal { mu: 0.0, sigma: std },
            rng,
        )?;
        let bias = Tensor::zeros(vec![cfg.out_channels]);
        Self::with_params(cfg, weight, bias)
    }

    pub fn with_params(cfg: Conv2dConfig, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let expect = [cfg.out_channels, cfg.in_channels, cfg.kernel.0, cfg.kernel.1];
        if weight.shape() != expect {
            return Err(Error::Dimension(format!(
                "conv weight shape {:?} does not match config {expect:?}",
                weight.shape()
            )));
        }
        if bias.shape() != [cfg.out_channels] {
            return Err(Error::Dimension(format!(
                "conv bias shape {:?}, expected [{}]",
                bias.shape(),
                cfg.out_channels
            )));
        }
        Ok(Conv2d {
            cfg,
            weight,
            bias,
            dweight: None,
            dbias: None,
            cache: None,
        })
    }

    pub fn config(&self) -> &Conv2dConfig {
        &self.cfg
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub(crate) fn weight_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weight
    }

    pub(crate) fn bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.bias
    }

    pub fn grad_weight(&self) -> Option<&Tensor<T>> {
        self.dweight.as_ref()
    }

    pub fn grad_bias(&self) -> Option<&Tensor<T>> {
        self.dbias.as_ref()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [c, h, w] => {
                if *c != self.cfg.in_channels {
                    return Err(Error::Dimension(format!(
                        "channel mismatch: input has {c} channels, conv expects {}",
                        self.cfg.in_channels
                    )));
                }
                let (oh, ow) = out_dims((*h, *w), self.cfg.kernel, self.cfg.stride, self.cfg.pad)?;
                Ok(vec![self.cfg.out_channels, oh, ow])
            }
            other => Err(Error::Dimension(format!(
                "conv input must be [C,H,W], got {other:?}"
            ))),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, cache: bool) -> Result<Tensor<T>> {
        let [n, c, h, w] = shape4(x, "conv2d")?;
        if c != self.cfg.in_channels {
            return Err(Error::Dimension(format!(
                "channel mismatch: input has {c} channels, conv expects {}",
                self.cfg.in_channels
            )));
        }
        let (kh, kw) = self.cfg.kernel;
        let (oh, ow) = out_dims((h, w), self.cfg.kernel, self.cfg.stride, self.cfg.pad)?;
        let cout = self.cfg.out_channels;
        let k_dim = c * kh * kw;
        let spatial = oh * ow;
        let per_in = c * h * w;
        let per_out = cout * spatial;

        let w2d = self.weight.data();
        let bias = self.bias.data();
        let fused = self.cfg.fused_relu;
        let (stride, pad) = (self.cfg.stride, self.cfg.pad);

        let mut out = vec![T::ZERO; n * per_out];
        let run = |xn: &[T], yn: &mut [T]| {
            let mut col = vec![T::ZERO; k_dim * spatial];
            im2col_into(xn, c, h, w, (kh, kw), stride, pad, &mut col);
            matmul_into(w2d, &col, cout, k_dim, spatial, yn);
            for (o, row) in yn.chunks_mut(spatial).enumerate() {
                let b = bias[o];
                for v in row.iter_mut() {
                    *v += b;
                    if fused && *v < T::ZERO {
                        *v = T::ZERO;
                    }
                }
            }
        };
        if n > 1 && n * per_out * k_dim >= 1 << 18 {
            out.par_chunks_mut(per_out)
                .zip(x.data().par_chunks(per_in))
                .for_each(|(yn, xn)| run(xn, yn));
        } else {
            for (yn, xn) in out.chunks_mut(per_out).zip(x.data().chunks(per_in)) {
                run(xn, yn);
            }
        }

        if cache {
            let relu_mask =
                fused.then(|| out.iter().map(|&v| u8::from(v > T::ZERO)).collect());
            self.cache = Some(ConvCache {
                x: x.clone(),
                relu_mask,
            });
        }
        Tensor::new(vec![n, cout, oh, ow], out)
    }

    pub fn backward(
        &mut self,
        dy: &Tensor<T>,
        param_grads: bool,
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("conv2d backward called before forward".into()))?;
        let x = cache.x;
        let [n, c, h, w] = shape4(&x, "conv2d")?;
        let (kh, kw) = self.cfg.kernel;
        let (oh, ow) = out_dims((h, w), self.cfg.kernel, self.cfg.stride, self.cfg.pad)?;
        let cout = self.cfg.out_channels;
        if dy.shape() != [n, cout, oh, ow] {
            return Err(Error::Dimension(format!(
                "conv2d backward: upstream gradient {:?}, expected {:?}",
                dy.shape(),
                [n, cout, oh, ow]
            )));
        }
        let k_dim = c * kh * kw;
        let spatial = oh * ow;
        let per_in = c * h * w;
        let per_out = cout * spatial;
        let (stride, pad) = (self.cfg.stride, self.cfg.pad);

        // Route the upstream gradient through the fused ReLU mask first.
        let masked;
        let dy_data: &[T] = match &cache.relu_mask {
            Some(mask) => {
                masked = dy
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m == 1 { g } else { T::ZERO })
                    .collect::<Vec<T>>();
                &masked
            }
            None => dy.data(),
        };

        if param_grads {
            let mut dw = vec![T::ZERO; cout * k_dim];
            let mut db = vec![T::ZERO; cout];
            let mut col = vec![T::ZERO; k_dim * spatial];
            // Accumulate over samples in ascending order for reproducibility.
            for s in 0..n {
                let xn = &x.data()[s * per_in..(s + 1) * per_in];
                let dyn_ = &dy_data[s * per_out..(s + 1) * per_out];
                im2col_into(xn, c, h, w, (kh, kw), stride, pad, &mut col);
                matmul_nt_acc(dyn_, &col, cout, spatial, k_dim, &mut dw);
                for (o, row) in dyn_.chunks(spatial).enumerate() {
                    let mut acc = T::ZERO;
                    for &v in row {
                        acc += v;
                    }
                    db[o] += acc;
                }
            }
            self.dweight = Some(Tensor::new(self.weight.shape().to_vec(), dw)?);
            self.dbias = Some(Tensor::new(vec![cout], db)?);
        }

        if !need_dx {
            return Ok(None);
        }
        let w2d = self.weight.data();
        let mut dx = vec![T::ZERO; n * per_in];
        let run = |dyn_: &[T], dxn: &mut [T]| {
            let mut dcol = vec![T::ZERO; k_dim * spatial];
            matmul_tn_acc(w2d, dyn_, cout, k_dim, spatial, &mut dcol);
            col2im_into(&dcol, c, h, w, (kh, kw), stride, pad, dxn);
        };
        if n > 1 && n * per_in * k_dim >= 1 << 18 {
            dx.par_chunks_mut(per_in)
                .zip(dy_data.par_chunks(per_out))
                .for_each(|(dxn, dyn_)| run(dyn_, dxn));
        } else {
            for (dxn, dyn_) in dx.chunks_mut(per_in).zip(dy_data.chunks(per_out)) {
                run(dyn_, dxn);
            }
        }
        Ok(Some(Tensor::new(vec![n, c, h, w], dx)?))
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn apply_sgd(&mut self, lr: f64) -> bool {
        let mut stepped = false;
        if let Some(g) = self.dweight.take() {
            super::sgd_update(&mut self.weight, &g, lr);
            stepped = true;
        }
        if let Some(g) = self.dbias.take() {
            super::sgd_update(&mut self.bias, &g, lr);
            stepped = true;
        }
        stepped
    }
}

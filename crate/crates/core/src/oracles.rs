//! Independent reference implementations for test suites: naive kernels and
//! central-finite-difference gradients. Compiled only under the `oracles`
//! feature, which the test targets enable; nothing in the production path
//! calls into this module.

use crate::tensor::{Scalar, Tensor};

/// Plain ijk triple-loop matrix product with a scalar accumulator.
pub fn naive_matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    assert_eq!(k, b.shape()[0]);
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::ZERO;
            for t in 0..k {
                acc += a.data()[i * k + t] * b.data()[t * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// Direct nested-loop convolution over a zero-padded input.
/// `x: [N,Cin,H,W]`, `w: [Cout,Cin,kh,kw]`, `bias: [Cout]`.
pub fn naive_conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Tensor<T> {
    let (n, cin, h, width) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    assert_eq!(cin, w.shape()[1]);
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (width + 2 * pw - kw) / sw + 1;

    let mut out = vec![T::ZERO; n * cout * oh * ow];
    for s in 0..n {
        for o in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.data()[o];
                    for c in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= width as isize {
                                    continue;
                                }
                                let xv = x.data()
                                    [((s * cin + c) * h + iy as usize) * width + ix as usize];
                                let wv = w.data()[((o * cin + c) * kh + ky) * kw + kx];
                                acc += wv * xv;
                            }
                        }
                    }
                    out[((s * cout + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out).unwrap()
}

/// Relative error with a unit floor, so near-zero gradients compare
/// absolutely: `|a - b| / max(1, |a|, |b|)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_error(x, y))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `L(values) = sum(upstream .* forward(values))`
/// with respect to `values`, at step `h`.
pub fn central_diff_grad(
    mut forward: impl FnMut(&[f64]) -> Vec<f64>,
    values: &[f64],
    upstream: &[f64],
    h: f64,
) -> Vec<f64> {
    let loss = |out: Vec<f64>| -> f64 {
        assert_eq!(out.len(), upstream.len());
        out.iter().zip(upstream).map(|(&o, &g)| o * g).sum()
    };
    let mut work = values.to_vec();
    let mut grad = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let original = work[i];
        work[i] = original + h;
        let plus = loss(forward(&work));
        work[i] = original - h;
        let minus = loss(forward(&work));
        work[i] = original;
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

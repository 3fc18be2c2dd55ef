//! im2col / col2im: convolution receptive fields as matrix columns.
//!
//! Unrolling patches into a `[C*kh*kw, Ho*Wo]` matrix turns convolution into
//! one matrix product per sample; `col2im` is the scatter-add inverse used by
//! the backward pass.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Output spatial size for one axis, or an error when the kernel does not fit
/// inside the padded input.
pub(crate) fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 {
        return Err(Error::Parameter(
            "kernel and stride must be positive".into(),
        ));
    }
    if padded < kernel {
        return Err(Error::Dimension(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Unroll `x: [C,H,W]` into `[C*kh*kw, Ho*Wo]`; column `j` lists the receptive
/// field of output position `j` in row-major `(C, kh, kw)` order. Padding
/// positions read as zero.
pub fn im2col<T: Scalar>(
    x: &Tensor<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor<T>> {
    let [c, h, w] = shape3(x)?;
    let (out_h, out_w) = out_dims((h, w), kernel, stride, pad)?;
    let rows = c * kernel.0 * kernel.1;
    let cols = out_h * out_w;
    let mut out = vec![T::ZERO; rows * cols];
    im2col_into(x.data(), c, h, w, kernel, stride, pad, &mut out);
    Tensor::new(vec![rows, cols], out)
}

/// Scatter-add inverse of [`im2col`]: fold `cols: [C*kh*kw, Ho*Wo]` back onto
/// a `[C,H,W]` canvas, summing overlapping contributions.
pub fn col2im<T: Scalar>(
    cols: &Tensor<T>,
    out_shape: (usize, usize, usize),
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor<T>> {
    let (c, h, w) = out_shape;
    let (out_h, out_w) = out_dims((h, w), kernel, stride, pad)?;
    let rows = c * kernel.0 * kernel.1;
    if cols.shape() != [rows, out_h * out_w] {
        return Err(Error::Dimension(format!(
            "col2im expects [{rows}, {}], got {:?}",
            out_h * out_w,
            cols.shape()
        )));
    }
    let mut out = vec![T::ZERO; c * h * w];
    col2im_into(cols.data(), c, h, w, kernel, stride, pad, &mut out);
    Tensor::new(vec![c, h, w], out)
}

pub(crate) fn out_dims(
    hw: (usize, usize),
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<(usize, usize)> {
    Ok((
        conv_out_len(hw.0, kernel.0, stride.0, pad.0)?,
        conv_out_len(hw.1, kernel.1, stride.1, pad.1)?,
    ))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col_into<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    out: &mut [T],
) {
    let out_h = (h + 2 * ph - kh) / sh + 1;
    let out_w = (w + 2 * pw - kw) / sw + 1;
    let cols = out_h * out_w;
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(out.len(), c * kh * kw * cols);

    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..out_h {
                    // source row for this output row, before padding removal
                    let iy = oy * sh + ky;
                    let dst_row = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if iy < ph || iy >= h + ph {
                        for v in dst_row.iter_mut() {
                            *v = T::ZERO;
                        }
                        continue;
                    }
                    let src_row = &plane[(iy - ph) * w..(iy - ph + 1) * w];
                    for (ox, v) in dst_row.iter_mut().enumerate() {
                        let ix = ox * sw + kx;
                        *v = if ix < pw || ix >= w + pw {
                            T::ZERO
                        } else {
                            src_row[ix - pw]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_into<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    out: &mut [T],
) {
    let out_h = (h + 2 * ph - kh) / sh + 1;
    let out_w = (w + 2 * pw - kw) / sw + 1;
    let ncols = out_h * out_w;
    debug_assert_eq!(out.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * kh * kw * ncols);

    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..out_h {
                    let iy = oy * sh + ky;
                    if iy < ph || iy >= h + ph {
                        continue;
                    }
                    let dst_row = &mut plane[(iy - ph) * w..(iy - ph + 1) * w];
                    for (ox, &v) in src[oy * out_w..(oy + 1) * out_w].iter().enumerate() {
                        let ix = ox * sw + kx;
                        if ix >= pw && ix < w + pw {
                            dst_row[ix - pw] += v;
                        }
                    }
                }
            }
        }
    }
}

fn shape3<T: Scalar>(x: &Tensor<T>) -> Result<[usize; 3]> {
    match x.shape() {
        [c, h, w] => Ok([*c, *h, *w]),
        other => Err(Error::Dimension(format!(
            "expected a [C,H,W] tensor, got {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{fill_random, Dist};

    #[test]
    fn unit_kernel_flattens_input() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let cols = im2col(&x, (1, 1), (1, 1), (0, 0)).unwrap();
        assert_eq!(cols.shape(), &[1, 4]);
        assert_eq!(cols.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn padded_column_sums_count_overlap() {
        let x = Tensor::full(vec![1, 3, 3], 1.0f32);
        let cols = im2col(&x, (3, 3), (1, 1), (1, 1)).unwrap();
        assert_eq!(cols.shape(), &[9, 9]);
        let sums: Vec<f32> = (0..9)
            .map(|j| (0..9).map(|r| cols.data()[r * 9 + j]).sum())
            .collect();
        assert_eq!(sums, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn oversized_kernel_is_an_error() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 2]);
        let err = im2col(&x, (5, 5), (1, 1), (1, 1)).unwrap_err();
        assert!(err.to_string().contains("larger than padded input"));
    }

    #[test]
    fn strided_columns_match_patch_extraction() {
        let mut rng = Rng::new(5, 0);
        let x: Tensor<f32> =
            fill_random(vec![2, 5, 5], Dist::Uniform { a: -1.0, b: 1.0 }, &mut rng).unwrap();
        let (kh, kw, s) = (3usize, 3usize, 2usize);
        let cols = im2col(&x, (kh, kw), (s, s), (0, 0)).unwrap();
        let (out_h, out_w) = (2usize, 2usize);
        assert_eq!(cols.shape(), &[2 * kh * kw, out_h * out_w]);

        // index-arithmetic oracle: walk every patch directly
        for oy in 0..out_h {
            for ox in 0..out_w {
                let j = oy * out_w + ox;
                for c in 0..2 {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let row = (c * kh + ky) * kw + kx;
                            let expected = x.at(&[c, oy * s + ky, ox * s + kx]).unwrap();
                            assert_eq!(cols.data()[row * (out_h * out_w) + j], expected);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn col2im_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y
        let mut rng = Rng::new(77, 0);
        for &(c, h, w, k, s, p) in &[(1usize, 4usize, 4usize, 3usize, 1usize, 1usize), (2, 5, 6, 3, 2, 0), (3, 4, 4, 2, 2, 1)] {
            let x: Tensor<f32> =
                fill_random(vec![c, h, w], Dist::Uniform { a: -1.0, b: 1.0 }, &mut rng).unwrap();
            let cols = im2col(&x, (k, k), (s, s), (p, p)).unwrap();
            let y: Tensor<f32> = fill_random(
                cols.shape().to_vec(),
                Dist::Uniform { a: -1.0, b: 1.0 },
                &mut rng,
            )
            .unwrap();
            let back = col2im(&y, (c, h, w), (k, k), (s, s), (p, p)).unwrap();

            let lhs: f64 = cols
                .data()
                .iter()
                .zip(y.data())
                .map(|(&a, &b)| (a as f64) * (b as f64))
                .sum();
            let rhs: f64 = x
                .data()
                .iter()
                .zip(back.data())
                .map(|(&a, &b)| (a as f64) * (b as f64))
                .sum();
            let denom = lhs.abs().max(rhs.abs()).max(1e-12);
            assert!(
                ((lhs - rhs) / denom).abs() < 1e-4,
                "adjoint mismatch: {lhs} vs {rhs}"
            );
        }
    }
}

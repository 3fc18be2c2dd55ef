//! Dense row-major tensors and the raw numeric kernels layers are built on.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Element type for tensors. Production kernels run at `f32`; `f64` exists so
/// gradients can be checked against central finite differences, which are too
/// noisy at 32 bits.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    /// Smallest positive normal value.
    const TINY: Self;
    /// Largest value strictly below one.
    const ALMOST_ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn max_with(self, other: Self) -> Self;
    fn min_with(self, other: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const TINY: Self = <$t>::MIN_POSITIVE;
            const ALMOST_ONE: Self = 1.0 - <$t>::EPSILON / 2.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }
            fn max_with(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            fn min_with(self, other: Self) -> Self {
                if self < other {
                    self
                } else {
                    other
                }
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense multi-dimensional array in row-major order.
///
/// The flat index of `(i_0, .., i_{r-1})` is `sum(i_d * stride_d)` with
/// `stride_{r-1} = 1`. Values are immutable once built as far as the kernel
/// API is concerned: every operation returns a fresh tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} values]", self.data.len())
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::Dimension("tensor shape must be non-empty".into()));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Dimension(format!(
            "tensor shape {shape:?} has a zero dimension"
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Dimension(format!(
                "shape {:?} wants {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        check_shape(&shape).expect("zeros: invalid shape");
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::ZERO; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        check_shape(&shape).expect("full: invalid shape");
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    /// 2-D tensor from nested rows; rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dimension("from_rows: no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("from_rows: ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    /// n-by-n identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::ONE;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Flat offset of a multi-index.
    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Dimension(format!(
                "index rank {} vs tensor rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            if ix >= dim {
                return Err(Error::Dimension(format!(
                    "index {ix} out of bounds for axis {i} of size {dim}"
                )));
            }
            flat = flat * dim + ix;
        }
        Ok(flat)
    }

    /// Multi-index of a flat offset.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut index = vec![0; self.shape.len()];
        for (d, &dim) in self.shape.iter().enumerate().rev() {
            index[d] = flat % dim;
            flat /= dim;
        }
        index
    }

    pub fn at(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.flat_index(index)?])
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Convert every element to another scalar width.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Reduction kinds for [`reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    /// Index of the maximum; ties resolve to the lowest index.
    Argmax,
}

/// Distributions accepted by [`fill_random`].
#[derive(Debug, Clone, Copy)]
pub enum Dist {
    Uniform { a: f64, b: f64 },
    Normal { mu: f64, sigma: f64 },
}

/// Matrix product `[m,k] x [k,n] -> [m,n]`.
///
/// Each output element accumulates over `t` in ascending order no matter how
/// the rows are scheduled, so the result is bitwise reproducible across
/// thread counts and equal to the naive triple loop.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Dimension(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: lhs {:?} vs rhs {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![T::ZERO; m * n];
    matmul_into(&a.data, &b.data, m, k, n, &mut out);
    Tensor::new(vec![m, n], out)
}

/// Work sizes below this run serially; above it, rows go to the thread pool.
const PAR_FLOPS: usize = 1 << 18;

pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |i: usize, out_row: &mut [T]| {
        for t in 0..k {
            let av = a[i * k + t];
            let brow = &b[t * n..(t + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_FLOPS && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out_row)| row(i, out_row));
    } else {
        for (i, out_row) in out.chunks_mut(n).enumerate() {
            row(i, out_row);
        }
    }
}

/// `a^T x b` for `a: [k,m]`, `b: [k,n]`, accumulating into `out: [m,n]`.
pub(crate) fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |i: usize, out_row: &mut [T]| {
        for t in 0..k {
            let av = a[t * m + i];
            let brow = &b[t * n..(t + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_FLOPS && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out_row)| row(i, out_row));
    } else {
        for (i, out_row) in out.chunks_mut(n).enumerate() {
            row(i, out_row);
        }
    }
}

/// `a x b^T` for `a: [m,k]`, `b: [n,k]`, accumulating into `out: [m,n]`.
pub(crate) fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let row = |i: usize, out_row: &mut [T]| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    };
    if m * k * n >= PAR_FLOPS && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out_row)| row(i, out_row));
    } else {
        for (i, out_row) in out.chunks_mut(n).enumerate() {
            row(i, out_row);
        }
    }
}

/// Reduce along one axis. The result drops that axis (a rank-1 input reduces
/// to shape `[1]` so shapes stay non-empty).
pub fn reduce<T: Scalar>(x: &Tensor<T>, kind: Reduce, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::Dimension(format!(
            "reduce axis {axis} out of range for shape {:?}",
            x.shape
        )));
    }
    let axis_len = x.shape[axis];
    let outer: usize = x.shape[..axis].iter().product();
    let inner: usize = x.shape[axis + 1..].iter().product();

    let mut out_shape: Vec<usize> = x
        .shape
        .iter()
        .enumerate()
        .filter(|&(d, _)| d != axis)
        .map(|(_, &s)| s)
        .collect();
    if out_shape.is_empty() {
        out_shape.push(1);
    }

    let mut out = vec![T::ZERO; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let first = o * axis_len * inner + i;
            let value = match kind {
                Reduce::Sum | Reduce::Mean => {
                    let mut acc = T::ZERO;
                    for a in 0..axis_len {
                        acc += x.data[first + a * inner];
                    }
                    if kind == Reduce::Mean {
                        acc / T::from_f64(axis_len as f64)
                    } else {
                        acc
                    }
                }
                Reduce::Argmax => {
                    let mut best = x.data[first];
                    let mut best_at = 0usize;
                    for a in 1..axis_len {
                        let v = x.data[first + a * inner];
                        if v > best {
                            best = v;
                            best_at = a;
                        }
                    }
                    T::from_f64(best_at as f64)
                }
            };
            out[o * inner + i] = value;
        }
    }
    Tensor::new(out_shape, out)
}

/// Fill a tensor with draws from `dist`, deterministic in `(seed, stream)`.
pub fn fill_random<T: Scalar>(shape: Vec<usize>, dist: Dist, rng: &mut Rng) -> Result<Tensor<T>> {
    check_shape(&shape)?;
    match dist {
        Dist::Uniform { a, b } if a >= b => {
            return Err(Error::Parameter(format!(
                "uniform bounds must satisfy a < b, got [{a}, {b})"
            )))
        }
        Dist::Normal { sigma, .. } if sigma <= 0.0 => {
            return Err(Error::Parameter(format!(
                "normal sigma must be positive, got {sigma}"
            )))
        }
        _ => {}
    }
    let numel = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        let v = match dist {
            Dist::Uniform { a, b } => rng.uniform(a, b),
            Dist::Normal { mu, sigma } => rng.normal(mu, sigma),
        };
        data.push(T::from_f64(v));
    }
    Tensor::new(shape, data)
}

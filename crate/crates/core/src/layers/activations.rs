//! Activation kernels and their layer wrappers.
//!
//! ReLU's derivative at exactly zero is taken as zero. Sigmoid is evaluated
//! branch-wise so neither tail overflows. Softmax applies over the last axis,
//! stabilized by max subtraction; its backward is the full Jacobian-vector
//! product.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// `dy` routed through the mask of `x > 0`.
pub fn relu_grad<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(Error::Dimension(format!(
            "relu backward: {:?} vs {:?}",
            x.shape(),
            dy.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    let p = if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    };
    // saturated tails round to exactly 0 or 1; keep the output strictly
    // inside (0, 1) while letting NaN through to the loss check
    if p >= T::ONE {
        T::ALMOST_ONE
    } else if p <= T::ZERO {
        T::TINY
    } else {
        p
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// `dy * p * (1 - p)` where `p` is the cached forward output.
pub fn sigmoid_grad<T: Scalar>(p: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if p.shape() != dy.shape() {
        return Err(Error::Dimension(format!(
            "sigmoid backward: {:?} vs {:?}",
            p.shape(),
            dy.shape()
        )));
    }
    let data = p
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&pv, &g)| g * pv * (T::ONE - pv))
        .collect();
    Tensor::new(p.shape().to_vec(), data)
}

/// Softmax over the last axis, each row stabilized by its max.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let cols = *x.shape().last().expect("non-empty shape");
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(cols) {
        let mut max = row[0];
        for &v in row.iter() {
            max = max.max_with(v);
        }
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Jacobian-vector product: `dx_i = p_i (dy_i - sum_j dy_j p_j)` per row.
pub fn softmax_grad<T: Scalar>(p: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if p.shape() != dy.shape() {
        return Err(Error::Dimension(format!(
            "softmax backward: {:?} vs {:?}",
            p.shape(),
            dy.shape()
        )));
    }
    let cols = *p.shape().last().expect("non-empty shape");
    let mut out = vec![T::ZERO; p.numel()];
    for ((prow, grow), orow) in p
        .data()
        .chunks(cols)
        .zip(dy.data().chunks(cols))
        .zip(out.chunks_mut(cols))
    {
        let mut dot = T::ZERO;
        for (&pv, &gv) in prow.iter().zip(grow) {
            dot += pv * gv;
        }
        for ((o, &pv), &gv) in orow.iter_mut().zip(prow).zip(grow) {
            *o = pv * (gv - dot);
        }
    }
    Tensor::new(p.shape().to_vec(), out)
}

macro_rules! activation_layer {
    ($name:ident, $what:literal) => {
        #[derive(Debug, Clone)]
        pub struct $name<T: Scalar> {
            cache: Option<Tensor<T>>,
        }

        impl<T: Scalar> $name<T> {
            pub fn new() -> Self {
                $name { cache: None }
            }

            pub fn has_cache(&self) -> bool {
                self.cache.is_some()
            }

            pub fn clear_cache(&mut self) {
                self.cache = None;
            }

            fn take_cache(&mut self) -> Result<Tensor<T>> {
                self.cache.take().ok_or_else(|| {
                    Error::State(concat!($what, " backward called before forward").into())
                })
            }
        }

        impl<T: Scalar> Default for $name<T> {
            fn default() -> Self {
                Self::new()
            }
        }
    };
}

activation_layer!(ReluLayer, "relu");
activation_layer!(SigmoidLayer, "sigmoid");
activation_layer!(SoftmaxLayer, "softmax");

impl<T: Scalar> ReluLayer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, cache: bool) -> Result<Tensor<T>> {
        if cache {
            self.cache = Some(x.clone()); // mask source
        }
        Ok(relu(x))
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.take_cache()?;
        relu_grad(&x, dy)
    }
}

impl<T: Scalar> SigmoidLayer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, cache: bool) -> Result<Tensor<T>> {
        let p = sigmoid(x);
        if cache {
            self.cache = Some(p.clone());
        }
        Ok(p)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.take_cache()?;
        sigmoid_grad(&p, dy)
    }
}

impl<T: Scalar> SoftmaxLayer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, cache: bool) -> Result<Tensor<T>> {
        let p = softmax(x)?;
        if cache {
            self.cache = Some(p.clone());
        }
        Ok(p)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.take_cache()?;
        softmax_grad(&p, dy)
    }
}

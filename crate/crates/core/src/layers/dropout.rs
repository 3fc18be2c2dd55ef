//! Inverted dropout: train-time zeroing with survivor rescaling so that
//! inference is a pure identity.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

use super::Mode;

#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    cache: Option<Vec<u8>>, // 1 = kept
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Dropout { rate, cache: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward<T: Scalar>(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        cache: bool,
        rng: Option<&mut Rng>,
    ) -> Result<Tensor<T>> {
        if mode == Mode::Infer {
            return Ok(x.clone());
        }
        let rng = rng.ok_or_else(|| {
            Error::State("dropout forward in train mode requires an rng".into())
        })?;
        let keep_scale = T::from_f64(1.0 / (1.0 - self.rate));
        let mut mask = vec![1u8; x.numel()];
        let mut out = x.data().to_vec();
        for (v, m) in out.iter_mut().zip(mask.iter_mut()) {
            if rng.bernoulli(self.rate) {
                *v = T::ZERO;
                *m = 0;
            } else {
                *v *= keep_scale;
            }
        }
        if cache {
            self.cache = Some(mask);
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .cache
            .take()
            .ok_or_else(|| Error::State("dropout backward called before forward".into()))?;
        if mask.len() != dy.numel() {
            return Err(Error::Dimension(format!(
                "dropout backward: upstream gradient {:?} does not match cached mask",
                dy.shape()
            )));
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - self.rate));
        let data = dy
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &m)| if m == 1 { g * keep_scale } else { T::ZERO })
            .collect();
        Tensor::new(dy.shape().to_vec(), data)
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

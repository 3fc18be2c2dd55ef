//! Flatten all axes after the batch axis.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    cache: Option<Vec<usize>>, // input shape
}

impl Flatten {
    pub fn new() -> Self {
        Flatten { cache: None }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, cache: bool) -> Result<Tensor<T>> {
        if x.rank() < 2 {
            return Err(Error::Dimension(format!(
                "flatten needs a batch axis plus features, got {:?}",
                x.shape()
            )));
        }
        let n = x.shape()[0];
        let features: usize = x.shape()[1..].iter().product();
        if cache {
            self.cache = Some(x.shape().to_vec());
        }
        x.reshape(vec![n, features])
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .cache
            .take()
            .ok_or_else(|| Error::State("flatten backward called before forward".into()))?;
        dy.reshape(shape)
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

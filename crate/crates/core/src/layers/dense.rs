//! Fully connected layer: `y = x W^T + b` with weight shape `(out, in)`.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{
    fill_random, matmul_into, matmul_nt_acc, matmul_tn_acc, Dist, Scalar, Tensor,
};

#[derive(Debug, Clone)]
pub struct Dense<T: Scalar> {
    weight: Tensor<T>, // (out, in)
    bias: Tensor<T>,   // (out)
    dweight: Option<Tensor<T>>,
    dbias: Option<Tensor<T>>,
    cache: Option<Tensor<T>>, // input x
}

impl<T: Scalar> Dense<T> {
    pub fn init(in_features: usize, out_features: usize, rng: &mut Rng) -> Result<Self> {
        let std = (2.0 / in_features as f64).sqrt();
        let weight = fill_random(
            vec![out_features, in_features],
            Dist::Normal { mu: 0.0, sigma: std },
            rng,
        )?;
        Self::with_params(weight, Tensor::zeros(vec![out_features]))
    }

    pub fn with_params(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::Dimension(format!(
                "dense weight must be (out, in), got {:?}",
                weight.shape()
            )));
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(Error::Dimension(format!(
                "dense bias shape {:?}, expected [{}]",
                bias.shape(),
                weight.shape()[0]
            )));
        }
        Ok(Dense {
            weight,
            bias,
            dweight: None,
            dbias: None,
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
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
            [f] if *f == self.in_features() => Ok(vec![self.out_features()]),
            other => Err(Error::Dimension(format!(
                "dense expects [{}] features, got {other:?}",
                self.in_features()
            ))),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, cache: bool) -> Result<Tensor<T>> {
        let (n, features) = match x.shape() {
            [n, f] => (*n, *f),
            other => {
                return Err(Error::Dimension(format!(
                    "dense input must be [N,features], got {other:?}"
                )))
            }
        };
        if features != self.in_features() {
            return Err(Error::Dimension(format!(
                "dense expects {} features, got {features}",
                self.in_features()
            )));
        }
        let out_f = self.out_features();
        let mut out = vec![T::ZERO; n * out_f];
        matmul_nt_acc(x.data(), self.weight.data(), n, features, out_f, &mut out);
        for row in out.chunks_mut(out_f) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        if cache {
            self.cache = Some(x.clone());
        }
        Tensor::new(vec![n, out_f], out)
    }

    pub fn backward(
        &mut self,
        dy: &Tensor<T>,
        param_grads: bool,
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::State("dense backward called before forward".into()))?;
        let n = x.shape()[0];
        let (in_f, out_f) = (self.in_features(), self.out_features());
        if dy.shape() != [n, out_f] {
            return Err(Error::Dimension(format!(
                "dense backward: upstream gradient {:?}, expected {:?}",
                dy.shape(),
                [n, out_f]
            )));
        }

        if param_grads {
            // dW = dy^T x ; db = column sums of dy
            let mut dw = vec![T::ZERO; out_f * in_f];
            matmul_tn_acc(dy.data(), x.data(), n, out_f, in_f, &mut dw);
            let mut db = vec![T::ZERO; out_f];
            for row in dy.data().chunks(out_f) {
                for (acc, &v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            self.dweight = Some(Tensor::new(vec![out_f, in_f], dw)?);
            self.dbias = Some(Tensor::new(vec![out_f], db)?);
        }

        if !need_dx {
            return Ok(None);
        }
        let mut dx = vec![T::ZERO; n * in_f];
        matmul_into(dy.data(), self.weight.data(), n, out_f, in_f, &mut dx);
        Ok(Some(Tensor::new(vec![n, in_f], dx)?))
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{LayerNode, Mode};

    #[test]
    fn identity_weights_add_bias() {
        let w = Tensor::<f32>::eye(2);
        let b = Tensor::full(vec![2], 1.0f32);
        let mut layer = LayerNode::dense_with("fc", w, b).unwrap();
        let x = Tensor::from_rows(&[vec![2.0f32, 3.0]]).unwrap();
        let y = layer.forward(&x, Mode::Infer, None).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn zero_weights_zero_bias_give_zeros() {
        let mut layer =
            LayerNode::dense_with("fc", Tensor::<f32>::zeros(vec![3, 4]), Tensor::zeros(vec![3]))
                .unwrap();
        let x = Tensor::full(vec![2, 4], 5.0f32);
        let y = layer.forward(&x, Mode::Infer, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_for_single_sample() {
        // N=1, x=[1,0], dy=[2] -> dW=[[2,0]], db=[2]
        let w = Tensor::<f32>::zeros(vec![1, 2]);
        let b = Tensor::zeros(vec![1]);
        let mut layer = LayerNode::dense_with("fc", w, b).unwrap();
        let x = Tensor::from_rows(&[vec![1.0f32, 0.0]]).unwrap();
        layer.forward(&x, Mode::Train, None).unwrap();
        let dy = Tensor::from_rows(&[vec![2.0f32]]).unwrap();
        let dx = layer.backward(&dy, true).unwrap().unwrap();
        let grads = layer.grads();
        assert_eq!(grads[0].1.data(), &[2.0, 0.0]);
        assert_eq!(grads[1].1.data(), &[2.0]);
        assert_eq!(dx.data(), &[0.0, 0.0]); // dy . W with W = 0
    }

    #[test]
    fn zero_upstream_gradient_zeroes_everything() {
        let mut rng = Rng::new(5, 2);
        let mut layer = LayerNode::<f32>::dense("fc", 3, 2, &mut rng).unwrap();
        let x = Tensor::full(vec![4, 3], 1.0f32);
        layer.forward(&x, Mode::Train, None).unwrap();
        let dy = Tensor::zeros(vec![4, 2]);
        layer.backward(&dy, true).unwrap();
        for (_, g) in layer.grads() {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn feature_mismatch_is_a_dimension_error() {
        let mut rng = Rng::new(5, 2);
        let mut layer = LayerNode::<f32>::dense("fc", 3, 2, &mut rng).unwrap();
        let x = Tensor::full(vec![4, 5], 1.0f32);
        assert!(matches!(
            layer.forward(&x, Mode::Infer, None).unwrap_err(),
            Error::Dimension(_)
        ));
    }
}

//! Layer forward/backward implementations: convolution, max-pooling, flatten,
//! dense, dropout, ReLU, sigmoid, softmax.
//!
//! A [`LayerNode`] couples one layer's parameters, gradients, forward cache
//! and trainable flag under a unique name. Backward passes populate parameter
//! gradients only on trainable nodes; frozen nodes still propagate the input
//! gradient.

mod activations;
mod conv;
mod dense;
mod dropout;
mod flatten;
mod pool;

pub use activations::{relu, relu_grad, sigmoid, sigmoid_grad, softmax, softmax_grad};
pub use conv::{Conv2d, Conv2dConfig};
pub use dense::Dense;
pub use dropout::Dropout;
pub use flatten::Flatten;
pub use pool::MaxPool2d;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

use activations::{ReluLayer, SigmoidLayer, SoftmaxLayer};

/// Forward-pass mode: training populates caches and activates dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub enum LayerKind<T: Scalar> {
    Conv2d(Conv2d<T>),
    MaxPool2d(MaxPool2d),
    Flatten(Flatten),
    Dense(Dense<T>),
    Dropout(Dropout),
    Relu(ReluLayer<T>),
    Sigmoid(SigmoidLayer<T>),
    Softmax(SoftmaxLayer<T>),
}

/// One architecture element with parameters, gradients and a trainable flag.
#[derive(Debug, Clone)]
pub struct LayerNode<T: Scalar = f32> {
    name: String,
    kind: LayerKind<T>,
    trainable: bool,
    /// Whether a train-mode forward should keep intermediates for backward.
    /// The model clears this on layers below the deepest trainable one.
    cache_enabled: bool,
}

impl<T: Scalar> LayerNode<T> {
    fn new(name: impl Into<String>, kind: LayerKind<T>) -> Self {
        LayerNode {
            name: name.into(),
            kind,
            trainable: true,
            cache_enabled: true,
        }
    }

    pub fn conv2d(name: impl Into<String>, cfg: Conv2dConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self::new(name, LayerKind::Conv2d(Conv2d::init(cfg, rng)?)))
    }

    /// Conv layer with explicit weights, shape `(Cout, Cin, kh, kw)`.
    pub fn conv2d_with(
        name: impl Into<String>,
        cfg: Conv2dConfig,
        weight: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self> {
        Ok(Self::new(
            name,
            LayerKind::Conv2d(Conv2d::with_params(cfg, weight, bias)?),
        ))
    }

    pub fn max_pool2d(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::MaxPool2d(MaxPool2d::new()))
    }

    pub fn flatten(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Flatten(Flatten::new()))
    }

    pub fn dense(
        name: impl Into<String>,
        in_features: usize,
        out_features: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self::new(
            name,
            LayerKind::Dense(Dense::init(in_features, out_features, rng)?),
        ))
    }

    /// Dense layer with explicit weights, shape `(out, in)`.
    pub fn dense_with(name: impl Into<String>, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        Ok(Self::new(
            name,
            LayerKind::Dense(Dense::with_params(weight, bias)?),
        ))
    }

    pub fn dropout(name: impl Into<String>, rate: f64) -> Result<Self> {
        Ok(Self::new(name, LayerKind::Dropout(Dropout::new(rate)?)))
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Relu(ReluLayer::new()))
    }

    pub fn sigmoid(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Sigmoid(SigmoidLayer::new()))
    }

    pub fn softmax(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Softmax(SoftmaxLayer::new()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &LayerKind<T> {
        &self.kind
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d(_))
    }

    pub fn is_sigmoid(&self) -> bool {
        matches!(self.kind, LayerKind::Sigmoid(_))
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub(crate) fn set_cache_enabled(&mut self, enabled: bool) {
        self.cache_enabled = enabled;
        if !enabled {
            self.clear_cache();
        }
    }

    /// Run the layer forward. Train mode keeps backward intermediates (when
    /// caching is enabled) and needs an rng if the layer is stochastic.
    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<Tensor<T>> {
        let cache = mode == Mode::Train && self.cache_enabled;
        match &mut self.kind {
            LayerKind::Conv2d(l) => l.forward(x, cache),
            LayerKind::MaxPool2d(l) => l.forward(x, cache),
            LayerKind::Flatten(l) => l.forward(x, cache),
            LayerKind::Dense(l) => l.forward(x, cache),
            LayerKind::Dropout(l) => l.forward(x, mode, cache, rng),
            LayerKind::Relu(l) => l.forward(x, cache),
            LayerKind::Sigmoid(l) => l.forward(x, cache),
            LayerKind::Softmax(l) => l.forward(x, cache),
        }
    }

    /// Consume the forward cache and propagate `dy`. Parameter gradients are
    /// filled only when the node is trainable; the input gradient is computed
    /// only when `need_dx` is set.
    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>> {
        let train = self.trainable;
        match &mut self.kind {
            LayerKind::Conv2d(l) => l.backward(dy, train, need_dx),
            LayerKind::MaxPool2d(l) => l.backward(dy).map(Some),
            LayerKind::Flatten(l) => l.backward(dy).map(Some),
            LayerKind::Dense(l) => l.backward(dy, train, need_dx),
            LayerKind::Dropout(l) => l.backward(dy).map(Some),
            LayerKind::Relu(l) => l.backward(dy).map(Some),
            LayerKind::Sigmoid(l) => l.backward(dy).map(Some),
            LayerKind::Softmax(l) => l.backward(dy).map(Some),
        }
    }

    /// Per-sample output shape for a per-sample input shape (no batch axis).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match &self.kind {
            LayerKind::Conv2d(l) => l.output_shape(input),
            LayerKind::MaxPool2d(l) => l.output_shape(input),
            LayerKind::Flatten(_) => Ok(vec![input.iter().product()]),
            LayerKind::Dense(l) => l.output_shape(input),
            LayerKind::Dropout(_)
            | LayerKind::Relu(_)
            | LayerKind::Sigmoid(_)
            | LayerKind::Softmax(_) => Ok(input.to_vec()),
        }
    }

    /// Named parameter tensors, e.g. `("block1_conv1.W", ...)`.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        match &self.kind {
            LayerKind::Conv2d(l) => {
                out.push((format!("{}.W", self.name), l.weight()));
                out.push((format!("{}.b", self.name), l.bias()));
            }
            LayerKind::Dense(l) => {
                out.push((format!("{}.W", self.name), l.weight()));
                out.push((format!("{}.b", self.name), l.bias()));
            }
            _ => {}
        }
        out
    }

    /// Mutable access to one parameter by suffix ("W" or "b").
    pub fn param_mut(&mut self, suffix: &str) -> Option<&mut Tensor<T>> {
        match (&mut self.kind, suffix) {
            (LayerKind::Conv2d(l), "W") => Some(l.weight_mut()),
            (LayerKind::Conv2d(l), "b") => Some(l.bias_mut()),
            (LayerKind::Dense(l), "W") => Some(l.weight_mut()),
            (LayerKind::Dense(l), "b") => Some(l.bias_mut()),
            _ => None,
        }
    }

    /// Gradients present after a backward pass, in `params()` order.
    pub fn grads(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        match &self.kind {
            LayerKind::Conv2d(l) => {
                if let Some(g) = l.grad_weight() {
                    out.push((format!("{}.W", self.name), g));
                }
                if let Some(g) = l.grad_bias() {
                    out.push((format!("{}.b", self.name), g));
                }
            }
            LayerKind::Dense(l) => {
                if let Some(g) = l.grad_weight() {
                    out.push((format!("{}.W", self.name), g));
                }
                if let Some(g) = l.grad_bias() {
                    out.push((format!("{}.b", self.name), g));
                }
            }
            _ => {}
        }
        out
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d(_) | LayerKind::Dense(_))
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn has_cache(&self) -> bool {
        match &self.kind {
            LayerKind::Conv2d(l) => l.has_cache(),
            LayerKind::MaxPool2d(l) => l.has_cache(),
            LayerKind::Flatten(l) => l.has_cache(),
            LayerKind::Dense(l) => l.has_cache(),
            LayerKind::Dropout(l) => l.has_cache(),
            LayerKind::Relu(l) => l.has_cache(),
            LayerKind::Sigmoid(l) => l.has_cache(),
            LayerKind::Softmax(l) => l.has_cache(),
        }
    }

    pub fn clear_cache(&mut self) {
        match &mut self.kind {
            LayerKind::Conv2d(l) => l.clear_cache(),
            LayerKind::MaxPool2d(l) => l.clear_cache(),
            LayerKind::Flatten(l) => l.clear_cache(),
            LayerKind::Dense(l) => l.clear_cache(),
            LayerKind::Dropout(l) => l.clear_cache(),
            LayerKind::Relu(l) => l.clear_cache(),
            LayerKind::Sigmoid(l) => l.clear_cache(),
            LayerKind::Softmax(l) => l.clear_cache(),
        }
    }

    /// Apply one SGD update `p <- p - lr * g` and clear gradients.
    /// Returns whether any gradient was consumed; frozen nodes never are.
    pub fn apply_sgd(&mut self, lr: f64) -> bool {
        if !self.trainable {
            return false;
        }
        match &mut self.kind {
            LayerKind::Conv2d(l) => l.apply_sgd(lr),
            LayerKind::Dense(l) => l.apply_sgd(lr),
            _ => false,
        }
    }
}

pub(crate) fn sgd_update<T: Scalar>(param: &mut Tensor<T>, grad: &Tensor<T>, lr: f64) {
    let lr = T::from_f64(lr);
    for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
}

pub(crate) fn shape4<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match x.shape() {
        [n, c, h, w] => Ok([*n, *c, *h, *w]),
        other => Err(Error::Dimension(format!(
            "{what}: expected a [N,C,H,W] tensor, got {other:?}"
        ))),
    }
}

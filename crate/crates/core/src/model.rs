//! Sequential model composition: the VGG16 base and gender-classifier
//! builders, transfer-learning freeze control, forward/backward over the
//! layer stack, weight persistence and prediction.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{Conv2dConfig, LayerNode, Mode};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use crate::weights::{self, WeightEntry};

/// Which layers an optimizer step may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainablePolicy {
    All,
    /// Freeze every conv layer; newly added head layers stay trainable.
    HeadOnly,
    /// Unfreeze only the k deepest conv layers (plus the head).
    LastKConvs(usize),
}

/// Ordered stack of uniquely named layers with a fixed input shape.
#[derive(Debug, Clone)]
pub struct SequentialModel<T: Scalar = f32> {
    layers: Vec<LayerNode<T>>,
    input_shape: (usize, usize, usize), // (C, H, W)
    class_names: Vec<String>,
}

impl<T: Scalar> SequentialModel<T> {
    pub fn new(input_shape: (usize, usize, usize)) -> Self {
        SequentialModel {
            layers: Vec::new(),
            input_shape,
            class_names: Vec::new(),
        }
    }

    /// Append a layer, checking name uniqueness and shape consistency.
    pub fn push(&mut self, layer: LayerNode<T>) -> Result<()> {
        if self.layers.iter().any(|l| l.name() == layer.name()) {
            return Err(Error::Parameter(format!(
                "duplicate layer name '{}'",
                layer.name()
            )));
        }
        let shape = self.output_shape()?;
        layer
            .output_shape(&shape)
            .map_err(|e| named(layer.name(), e))?;
        self.layers.push(layer);
        self.refresh_cache_plan();
        Ok(())
    }

    pub fn layers(&self) -> &[LayerNode<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerNode<T>] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn set_class_names(&mut self, names: Vec<String>) {
        self.class_names = names;
    }

    /// Per-sample shape after every layer, starting from the input shape.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let (c, h, w) = self.input_shape;
        let mut shape = vec![c, h, w];
        let mut all = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| named(layer.name(), e))?;
            all.push(shape.clone());
        }
        Ok(all)
    }

    /// Per-sample output shape of the last layer.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let (c, h, w) = self.input_shape;
        Ok(self
            .infer_shapes()?
            .pop()
            .unwrap_or_else(|| vec![c, h, w]))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.trainable())
            .map(|l| l.param_count())
            .sum()
    }

    /// Apply a freeze policy. Layers without parameters keep propagating
    /// gradients regardless of their flag.
    pub fn set_trainable(&mut self, policy: TrainablePolicy) -> Result<()> {
        let conv_total = self.layers.iter().filter(|l| l.is_conv()).count();
        if let TrainablePolicy::LastKConvs(k) = policy {
            if k > conv_total {
                return Err(Error::Parameter(format!(
                    "cannot unfreeze {k} conv layers, model has {conv_total}"
                )));
            }
        }
        let mut conv_seen = 0usize;
        for layer in &mut self.layers {
            let trainable = if layer.is_conv() {
                conv_seen += 1;
                match policy {
                    TrainablePolicy::All => true,
                    TrainablePolicy::HeadOnly => false,
                    TrainablePolicy::LastKConvs(k) => conv_seen > conv_total - k,
                }
            } else {
                true
            };
            layer.set_trainable(trainable);
        }
        self.refresh_cache_plan();
        Ok(())
    }

    /// Train-mode forwards only need caches from the deepest trainable
    /// parameter layer upward; everything below is never revisited by the
    /// backward pass.
    fn refresh_cache_plan(&mut self) {
        let first_trainable = self
            .layers
            .iter()
            .position(|l| l.has_params() && l.trainable())
            .unwrap_or(0);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.set_cache_enabled(i >= first_trainable);
        }
    }

    /// Compose layer forwards in order. Train mode populates backward caches
    /// and drives dropout from `rng`.
    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        mut rng: Option<&mut Rng>,
    ) -> Result<Tensor<T>> {
        let (c, h, w) = self.input_shape;
        match x.shape() {
            [_, xc, xh, xw] if (*xc, *xh, *xw) == (c, h, w) => {}
            other => {
                return Err(Error::Dimension(format!(
                    "model input {other:?} does not match expected [N, {c}, {h}, {w}]"
                )))
            }
        }
        let mut value = x.clone();
        for layer in &mut self.layers {
            value = layer
                .forward(&value, mode, rng.as_deref_mut())
                .map_err(|e| named(layer.name(), e))?;
        }
        Ok(value)
    }

    /// Propagate `output_grad` backwards through every cached layer,
    /// populating parameter gradients on trainable layers.
    ///
    /// Returns the gradient at the lowest layer reached; when every layer
    /// participated (fully trainable models) this is the gradient with
    /// respect to the network input.
    pub fn backward(&mut self, output_grad: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_from(self.layers.len(), output_grad)
    }

    /// Backward pass for the sigmoid-output head when the loss gradient is
    /// already taken with respect to the sigmoid's input (the fused
    /// cross-entropy identity). The sigmoid layer itself is skipped.
    pub fn backward_from_logits(&mut self, logit_grad: &Tensor<T>) -> Result<()> {
        let last = self
            .layers
            .last_mut()
            .ok_or_else(|| Error::State("empty model".into()))?;
        if !last.is_sigmoid() {
            return Err(Error::State(
                "backward_from_logits requires a sigmoid output layer".into(),
            ));
        }
        if !last.has_cache() {
            return Err(Error::State(
                "model backward called before a train-mode forward".into(),
            ));
        }
        last.clear_cache();
        let top = self.layers.len() - 1;
        self.backward_from(top, logit_grad)?;
        Ok(())
    }

    fn backward_from(&mut self, top: usize, grad: &Tensor<T>) -> Result<Tensor<T>> {
        if top == 0 {
            return Ok(grad.clone());
        }
        if !self.layers[top - 1].has_cache() {
            return Err(Error::State(
                "model backward called before a train-mode forward".into(),
            ));
        }
        let mut grad = grad.clone();
        for i in (0..top).rev() {
            if !self.layers[i].has_cache() {
                break;
            }
            let need_dx = i == 0 || self.layers[..i].iter().any(|l| l.has_cache());
            let (head, tail) = self.layers.split_at_mut(i);
            let _ = head;
            let out = tail[0]
                .backward(&grad, need_dx)
                .map_err(|e| named(tail[0].name(), e))?;
            match out {
                Some(g) => grad = g,
                None => break,
            }
        }
        Ok(grad)
    }

    /// Labelled prediction per sample: the sigmoid output is the probability
    /// of class index 1, and the positive label applies only strictly above
    /// the threshold.
    pub fn predict(&mut self, x: &Tensor<T>, threshold: f64) -> Result<Vec<(String, f64)>> {
        if self.class_names.len() != 2 {
            return Err(Error::State(
                "predict requires a two-class classifier head".into(),
            ));
        }
        let out = self.forward(x, Mode::Infer, None)?;
        if out.shape().len() != 2 || out.shape()[1] != 1 {
            return Err(Error::Dimension(format!(
                "predict expects a [N,1] output, got {:?}",
                out.shape()
            )));
        }
        Ok(out
            .data()
            .iter()
            .map(|&p| {
                let p = p.to_f64();
                let idx = usize::from(p > threshold);
                (self.class_names[idx].clone(), p)
            })
            .collect())
    }

    /// All parameters as named weight entries, in layer order.
    pub fn weight_entries(&self) -> Vec<WeightEntry> {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|(name, t)| WeightEntry {
                name,
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|&v| v.to_f64() as f32).collect(),
            })
            .collect()
    }

    /// Serialized weight-file bytes for the current parameters.
    pub fn weight_bytes(&self) -> Vec<u8> {
        weights::to_bytes(&self.weight_entries())
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        weights::save(path, &self.weight_entries())
    }

    pub fn load_weights(&mut self, path: &Path, strict: bool) -> Result<()> {
        let entries = weights::load(path)?;
        self.load_weight_entries(&entries, strict)
    }

    /// Copy matching entries into the model. Shape conflicts are always an
    /// error; `strict` additionally requires the file and the model to carry
    /// exactly the same parameter set.
    pub fn load_weight_entries(&mut self, entries: &[WeightEntry], strict: bool) -> Result<()> {
        let mut filled = BTreeSet::new();
        for entry in entries {
            let Some((layer_name, suffix)) = entry.name.rsplit_once('.') else {
                if strict {
                    return Err(Error::Validation(format!(
                        "weight entry '{}' has no layer.parameter form",
                        entry.name
                    )));
                }
                continue;
            };
            let target = self
                .layers
                .iter_mut()
                .find(|l| l.name() == layer_name)
                .and_then(|l| l.param_mut(suffix));
            match target {
                Some(param) => {
                    if param.shape() != entry.shape {
                        return Err(Error::ShapeConflict {
                            name: entry.name.clone(),
                            file: entry.shape.clone(),
                            model: param.shape().to_vec(),
                        });
                    }
                    for (dst, &src) in param.data_mut().iter_mut().zip(&entry.data) {
                        *dst = T::from_f64(src as f64);
                    }
                    filled.insert(entry.name.clone());
                }
                None if strict => {
                    return Err(Error::Validation(format!(
                        "weight entry '{}' does not match any model parameter",
                        entry.name
                    )))
                }
                None => {}
            }
        }
        if strict {
            for layer in &self.layers {
                for (name, _) in layer.params() {
                    if !filled.contains(&name) {
                        return Err(Error::Validation(format!(
                            "model parameter '{name}' missing from weight file"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut LayerNode<T>> {
        self.layers.iter_mut().find(|l| l.name() == name)
    }

    pub fn layer(&self, name: &str) -> Option<&LayerNode<T>> {
        self.layers.iter().find(|l| l.name() == name)
    }
}

fn named(layer: &str, err: Error) -> Error {
    match err {
        Error::Dimension(msg) => Error::Dimension(format!("layer '{layer}': {msg}")),
        Error::State(msg) => Error::State(format!("layer '{layer}': {msg}")),
        other => other,
    }
}

/// VGG16 convolutional base: 13 conv layers (3x3, same padding, fused ReLU)
/// in blocks of (2, 2, 3, 3, 3) at widths (64, 128, 256, 512, 512), each
/// block closed by a 2x2 stride-2 max pool. No dense head.
pub fn build_vgg16_base<T: Scalar>(
    input_shape: (usize, usize, usize),
    rng: &mut Rng,
) -> Result<SequentialModel<T>> {
    let (c, h, w) = input_shape;
    if c != 3 {
        return Err(Error::Parameter(format!(
            "VGG16 base expects 3 input channels, got {c}"
        )));
    }
    if h < 32 || w < 32 {
        return Err(Error::Dimension(format!(
            "input {h}x{w} too small for 5 pooling halvings; need at least 32x32"
        )));
    }
    let mut model = SequentialModel::new(input_shape);
    let mut in_c = c;
    for (block, (width, convs)) in [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]
        .into_iter()
        .enumerate()
    {
        for conv in 1..=convs {
            model.push(LayerNode::conv2d(
                format!("block{}_conv{}", block + 1, conv),
                Conv2dConfig::vgg3x3(in_c, width),
                rng,
            )?)?;
            in_c = width;
        }
        model.push(LayerNode::max_pool2d(format!("block{}_pool", block + 1)))?;
    }
    Ok(model)
}

/// Append the binary-classification head: flatten, dropout, a single-unit
/// dense layer and a sigmoid output. Classes are (Female, Male) with the
/// sigmoid giving the probability of index 1.
pub fn build_gender_classifier<T: Scalar>(
    mut base: SequentialModel<T>,
    dropout_rate: f64,
    rng: &mut Rng,
) -> Result<SequentialModel<T>> {
    let feature_shape = base.output_shape()?;
    if feature_shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "classifier base must end in a spatial feature map, got {feature_shape:?}"
        )));
    }
    let flat: usize = feature_shape.iter().product();
    base.push(LayerNode::flatten("flatten"))?;
    base.push(LayerNode::dropout("dropout", dropout_rate)?)?;
    base.push(LayerNode::dense("output", flat, 1, rng)?)?;
    base.push(LayerNode::sigmoid("sigmoid"))?;
    base.set_class_names(vec!["Female".into(), "Male".into()]);
    Ok(base)
}

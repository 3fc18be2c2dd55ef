//! Mini-batch gradient-descent training with validation-driven callbacks:
//! best-weight checkpointing, reduce-LR-on-plateau and early stopping, all
//! monitoring the validation loss.

use std::path::PathBuf;
use std::time::Instant;

use crate::data::{AugmentConfig, BatchConfig, DataSource, SplitAssignment};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::SequentialModel;
use crate::rng::{streams, Rng};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct ReduceLrConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for ReduceLrConfig {
    fn default() -> Self {
        ReduceLrConfig {
            factor: 0.5,
            patience: 3,
            min_lr: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EarlyStopConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            patience: 10,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub reduce_lr: ReduceLrConfig,
    pub early_stop: EarlyStopConfig,
    pub checkpoint_path: PathBuf,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            learning_rate: 1e-3,
            reduce_lr: ReduceLrConfig::default(),
            early_stop: EarlyStopConfig::default(),
            checkpoint_path: PathBuf::from("best.weights"),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if !(self.reduce_lr.factor > 0.0 && self.reduce_lr.factor < 1.0) {
            return Err(Error::Parameter(format!(
                "reduce-LR factor must lie in (0, 1), got {}",
                self.reduce_lr.factor
            )));
        }
        if self.reduce_lr.patience < 1 || self.early_stop.patience < 1 {
            return Err(Error::Parameter("callback patience must be at least 1".into()));
        }
        if self.reduce_lr.min_lr <= 0.0 {
            return Err(Error::Parameter(format!(
                "min_lr must be positive, got {}",
                self.reduce_lr.min_lr
            )));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Callback bookkeeping across epochs.
#[derive(Debug, Clone)]
pub struct CallbackState {
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improve_lr: usize,
    pub epochs_since_improve_stop: usize,
}

impl Default for CallbackState {
    fn default() -> Self {
        CallbackState {
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improve_lr: 0,
            epochs_since_improve_stop: 0,
        }
    }
}

impl CallbackState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// What the callbacks decided after one validation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallbackDecision {
    pub save_checkpoint: bool,
    pub new_lr: Option<f64>,
    pub stop: bool,
}

/// Binary cross-entropy over sigmoid outputs.
///
/// The loss clamps probabilities to `[eps, 1 - eps]` with `eps = 1e-7` so the
/// logs stay finite; the returned gradient is taken with respect to the
/// sigmoid's *input* via the fused identity `dL/dz = (p - y) / N`.
pub fn bce_loss<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if p.shape() != y.shape() {
        return Err(Error::Dimension(format!(
            "bce_loss: predictions {:?} vs targets {:?}",
            p.shape(),
            y.shape()
        )));
    }
    let n = p.shape()[0];
    if n == 0 {
        return Err(Error::Dimension("bce_loss: empty batch".into()));
    }
    const EPS: f64 = 1e-7;
    let mut total = 0.0f64;
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut grad = Vec::with_capacity(p.numel());
    for (&pv, &yv) in p.data().iter().zip(y.data()) {
        let pc = pv.to_f64().clamp(EPS, 1.0 - EPS);
        let yv64 = yv.to_f64();
        total -= yv64 * pc.ln() + (1.0 - yv64) * (1.0 - pc).ln();
        grad.push((pv - yv) * inv_n);
    }
    Ok((total / n as f64, Tensor::new(p.shape().to_vec(), grad)?))
}

/// Apply `p <- p - lr * g` to every trainable parameter and clear gradients.
pub fn sgd_step<T: Scalar>(model: &mut SequentialModel<T>, lr: f64) -> Result<()> {
    let mut stepped = false;
    for layer in model.layers_mut() {
        stepped |= layer.apply_sgd(lr);
    }
    if !stepped {
        return Err(Error::State(
            "sgd_step called without populated gradients".into(),
        ));
    }
    Ok(())
}

/// One post-validation callback evaluation. Improvement means
/// `val_loss < best - min_delta`; it saves a checkpoint and resets both
/// patience counters. The reduce-LR counter halves the rate at its patience
/// (never below `min_lr`); the early-stop counter requests a stop at its own.
pub fn apply_callbacks(
    state: &mut CallbackState,
    epoch: usize,
    val_loss: f64,
    lr: f64,
    cfg: &TrainConfig,
) -> CallbackDecision {
    let improved = val_loss < state.best_val_loss - cfg.early_stop.min_delta;
    if improved {
        state.best_val_loss = val_loss;
        state.best_epoch = epoch;
        state.epochs_since_improve_lr = 0;
        state.epochs_since_improve_stop = 0;
        return CallbackDecision {
            save_checkpoint: true,
            new_lr: None,
            stop: false,
        };
    }
    state.epochs_since_improve_lr += 1;
    state.epochs_since_improve_stop += 1;

    let mut new_lr = None;
    if state.epochs_since_improve_lr >= cfg.reduce_lr.patience {
        let reduced = (lr * cfg.reduce_lr.factor).max(cfg.reduce_lr.min_lr);
        if reduced < lr {
            new_lr = Some(reduced);
        }
        state.epochs_since_improve_lr = 0;
    }
    CallbackDecision {
        save_checkpoint: false,
        new_lr,
        stop: state.epochs_since_improve_stop >= cfg.early_stop.patience,
    }
}

/// Outcome of a training run. The model passed to [`run_training`] is left
/// holding the best-checkpoint weights; `final_weights` snapshots the
/// last-epoch parameters in weight-file bytes.
#[derive(Debug)]
pub struct TrainResult {
    pub records: Vec<EpochRecord>,
    pub final_weights: Vec<u8>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

fn count_correct<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>) -> usize {
    p.data()
        .iter()
        .zip(y.data())
        .filter(|(&pv, &yv)| {
            let predicted = usize::from(pv.to_f64() > 0.5);
            predicted == yv.to_f64() as usize
        })
        .count()
}

/// Average loss and accuracy of an infer-mode pass over `indices`.
pub fn validate_pass(
    model: &mut SequentialModel<f32>,
    data: &DataSource,
    indices: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut seen = 0usize;
    for batch in data.batches(indices, &BatchConfig::evaluation(batch_size))? {
        let batch = batch?;
        let p = model.forward(&batch.inputs, Mode::Infer, None)?;
        let (loss, _) = bce_loss(&p, &batch.targets)?;
        loss_sum += loss * batch.len() as f64;
        correct += count_correct(&p, &batch.targets);
        seen += batch.len();
    }
    if seen == 0 {
        return Err(Error::Validation("validation split is empty".into()));
    }
    Ok((loss_sum / seen as f64, correct as f64 / seen as f64))
}

/// Run the full epoch loop: shuffled augmented training batches with one SGD
/// step each, a validation pass, record keeping and the three callbacks. On
/// early stop or epoch exhaustion the best checkpoint is restored into
/// `model`.
pub fn run_training(
    model: &mut SequentialModel<f32>,
    data: &DataSource,
    split: &SplitAssignment,
    augment: &AugmentConfig,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    augment.validate()?;

    let mut lr = cfg.learning_rate;
    let mut state = CallbackState::new();
    let mut dropout_rng = Rng::new(cfg.seed, streams::DROPOUT);
    let mut records = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let batch_cfg = BatchConfig {
            batch_size: cfg.batch_size,
            shuffle: true,
            seed: cfg.seed,
            epoch: epoch as u64,
            augment: Some(*augment),
        };
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (step, batch) in data.batches(&split.train, &batch_cfg)?.enumerate() {
            let batch = batch?;
            let p = model.forward(&batch.inputs, Mode::Train, Some(&mut dropout_rng))?;
            let (loss, dldz) = bce_loss(&p, &batch.targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: step + 1,
                });
            }
            loss_sum += loss * batch.len() as f64;
            correct += count_correct(&p, &batch.targets);
            seen += batch.len();
            model.backward_from_logits(&dldz)?;
            sgd_step(model, lr)?;
        }
        if seen == 0 {
            return Err(Error::Validation("training split is empty".into()));
        }

        let (val_loss, val_acc) = validate_pass(model, data, &split.val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, step: 0 });
        }

        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss,
            val_acc,
            lr,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        let decision = apply_callbacks(&mut state, epoch, val_loss, lr, cfg);
        if decision.save_checkpoint {
            model.save_weights(&cfg.checkpoint_path)?;
        }
        if let Some(reduced) = decision.new_lr {
            lr = reduced;
        }
        records.push(record);
        if decision.stop {
            stopped_early = true;
            break;
        }
    }

    let final_weights = model.weight_bytes();
    model.load_weights(&cfg.checkpoint_path, true)?;
    Ok(TrainResult {
        records,
        final_weights,
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        stopped_early,
    })
}

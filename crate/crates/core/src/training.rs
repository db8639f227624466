//! Adam, the step learning-rate schedule, early stopping and the training loop.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::architectures::Model;
use crate::autograd::{Gradients, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::features::{encode_batch, DeliveryRecord, FeatureConfig};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Seed of the per-epoch shuffles.
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop as soon as the full training-set MSE drops below this value.
    pub stop_at_train_mse: Option<f64>,
    /// Record wall-clock seconds per epoch (otherwise written as 0).
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-4,
            lr_halving_period: 40,
            batch_size: 64,
            patience: 25,
            max_epochs: 500,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            stop_at_train_mse: None,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr {} must be non-negative", self.initial_lr)));
        }
        if self.lr_halving_period == 0 || self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config("halving period, batch size, patience and max_epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam needs betas in [0, 1) and a positive epsilon".into()));
        }
        Ok(())
    }
}

/// `initial_lr · 0.5^floor(epoch / period)` for a 0-based epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch / cfg.lr_halving_period).min(i32::MAX as usize) as i32;
    cfg.initial_lr * 0.5f64.powi(halvings)
}

/// True when none of the last `patience` validation losses improves strictly
/// on the best loss recorded before them.
pub fn early_stop(val_losses: &[f64], patience: usize) -> bool {
    if patience == 0 || val_losses.len() <= patience {
        return false;
    }
    let (before, recent) = val_losses.split_at(val_losses.len() - patience);
    let best_before = before.iter().copied().fold(f64::INFINITY, f64::min);
    recent.iter().all(|&v| v >= best_before)
}

/// First and second moment estimates per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    for (id, p) in store.iter() {
        if let Some(g) = grads.param(id) {
            if !g.is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for parameter '{}'", p.name)));
            }
        }
    }
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let Some(g) = grads.param(id) else { continue };
        let i = id.index();
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let w = store.get_mut(id).data_mut();
        for (((w, m), v), &g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Encoded inputs `[N, 12, 1]` with their duration targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub inputs: Tensor,
    pub targets: Vec<f64>,
}

impl Samples {
    pub fn new(inputs: Tensor, targets: Vec<f64>) -> Result<Self> {
        if inputs.shape().batch != targets.len() {
            return Err(Error::shape(format!("{} inputs but {} targets", inputs.shape().batch, targets.len())));
        }
        Ok(Samples { inputs, targets })
    }

    pub fn from_records(records: &[DeliveryRecord], cfg: &FeatureConfig) -> Result<Self> {
        Samples::new(encode_batch(records, cfg)?, records.iter().map(DeliveryRecord::duration_h).collect())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Samples> {
        Ok(Samples {
            inputs: self.inputs.gather_batch(indices)?,
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        })
    }
}

/// Mean squared error of `model` over `samples`.
pub fn evaluate_mse(model: &Model, samples: &Samples) -> Result<f64> {
    let preds = model.predict(&samples.inputs)?;
    let se: f64 = preds.iter().zip(&samples.targets).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(se / samples.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Sample-weighted mean of the mini-batch losses.
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss (first on ties).
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_mse(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch.checked_sub(1)?).map(|e| e.val_mse)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_mse", "val_mse", "lr", "seconds"])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.train_mse.to_string(),
                e.val_mse.to_string(),
                e.lr.to_string(),
                e.seconds.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Why the loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    TrainTarget,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters restored to the best validation epoch.
    pub model: Model,
    pub history: TrainHistory,
    pub stop: StopReason,
}

fn batch_gradients(model: &Model, batch: &Samples) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.inputs.clone());
    let y = tape.constant(Tensor::new(Shape::new(batch.len(), 1, 1), batch.targets.clone())?);
    let out = model.forward(&mut tape, x)?;
    let loss = tape.mse_loss(out, y)?;
    let value = tape.value(loss).data()[0];
    Ok((value, tape.backward(loss)?))
}

/// Mini-batch Adam on MSE with per-epoch shuffling, validation monitoring,
/// early stopping and best-epoch restoration.
pub fn train(mut model: Model, train_set: &Samples, val_set: &Samples, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::contract("training and validation sets must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut val_losses = Vec::new();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.gather(chunk)?;
            let (loss, grads) = batch_gradients(&model, &batch)?;
            let failure = if !loss.is_finite() {
                Some(format!("training loss is {loss}"))
            } else {
                adam_step(model.params_mut(), &grads, &mut state, lr, cfg).err().map(|e| e.to_string())
            };
            if let Some(reason) = failure {
                if let Some((_, store)) = best.take() {
                    model.set_params(store)?;
                }
                return Err(Error::Diverged { epoch: epoch + 1, reason, last_good: Box::new(model) });
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let train_mse = loss_sum / train_set.len() as f64;
        let val_mse = evaluate_mse(&model, val_set)?;
        if !val_mse.is_finite() {
            if let Some((_, store)) = best.take() {
                model.set_params(store)?;
            }
            let reason = format!("validation loss is {val_mse}");
            return Err(Error::Diverged { epoch: epoch + 1, reason, last_good: Box::new(model) });
        }
        if best.as_ref().is_none_or(|(b, _)| val_mse < *b) {
            best = Some((val_mse, model.params().clone()));
            history.best_epoch = epoch + 1;
        }
        let seconds = if cfg.record_time { started.elapsed().as_secs_f64() } else { 0.0 };
        history.epochs.push(EpochRecord { epoch: epoch + 1, train_mse, val_mse, lr, seconds });
        val_losses.push(val_mse);
        log::debug!("epoch {} train {train_mse:.5} val {val_mse:.5} lr {lr:e}", epoch + 1);

        if let Some(target) = cfg.stop_at_train_mse {
            // The exact pass is only worth its cost once the running average is close.
            if train_mse < 4.0 * target && evaluate_mse(&model, train_set)? < target {
                stop = StopReason::TrainTarget;
                break;
            }
        }
        if early_stop(&val_losses, cfg.patience) {
            stop = StopReason::EarlyStop;
            break;
        }
    }
    if stop != StopReason::TrainTarget {
        if let Some((_, store)) = best {
            model.set_params(store)?;
        }
    }
    Ok(TrainOutcome { model, history, stop })
}

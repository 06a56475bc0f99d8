//! Masked-MSE training with Adam and validation-based checkpoint selection.

mod adam;
mod batch;
mod gradcheck;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use batch::{make_batch, mse_loss, Batch};
pub use gradcheck::{grad_check, grad_check_with, GradCheckConfig, GradReport, TensorCheck};

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Avcrn, Checkpoint};
use crate::nn::{Forward, ParamGrads, ParamStore};
use crate::tensor::BatchMoments;
use crate::visual::AvExample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Utterances per batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub snr_range_db: [f64; 2],
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; off unless set.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            batch_size: 4,
            max_epochs: 10,
            max_steps: None,
            seed: 0,
            snr_range_db: [-10.0, 10.0],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be a positive number"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be positive"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps", "must be positive when set"));
        }
        let [lo, hi] = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("snr_range_db", format!("[{lo}, {hi}] is empty")));
        }
        for (field, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("clip_norm", "must be positive when set"));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Model and optimizer settings as read from a JSON config file. Omitted
/// fields take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: crate::model::ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Validates both sections, qualifying field names with the section.
    pub fn validate(&self) -> Result<()> {
        let qualify = |section: &str| {
            let section = section.to_string();
            move |e: Error| match e {
                Error::Config { field, message } => Error::Config {
                    field: format!("{section}.{field}"),
                    message,
                },
                other => other,
            }
        };
        self.model.validate().map_err(qualify("model"))?;
        self.train.validate().map_err(qualify("train"))
    }
}

/// Loss, parameter gradients and batch-norm statistics of one train-mode pass.
pub struct StepOutput {
    pub loss: f64,
    pub grads: ParamGrads,
    pub bn: Vec<(String, BatchMoments)>,
}

fn ready(batch: &Batch) -> Result<std::borrow::Cow<'_, Batch>> {
    if batch.present.iter().all(|&p| p) {
        Ok(std::borrow::Cow::Borrowed(batch))
    } else {
        Ok(std::borrow::Cow::Owned(batch.compact()?))
    }
}

/// Masked MSE of `model` on `batch` with parameters taken from `store`.
pub fn forward_loss(model: &Avcrn, store: &ParamStore, batch: &Batch, train: bool) -> Result<f64> {
    let batch = ready(batch)?;
    let mut f = Forward::new(store, train);
    let loss = record_loss(model, &mut f, &batch)?;
    Ok(f.g.value(loss)[0])
}

fn record_loss(model: &Avcrn, f: &mut Forward, batch: &Batch) -> Result<crate::tensor::Var> {
    let a = f.input(&batch.mixture)?;
    let v = f.input(&batch.video)?;
    let t = f.input(&batch.target)?;
    let m = f.input(&batch.mask)?;
    let (pred, _) = model.forward(f, a, v)?;
    mse_loss(&mut f.g, pred, t, m)
}

pub fn loss_and_grads(model: &Avcrn, store: &ParamStore, batch: &Batch) -> Result<StepOutput> {
    let batch = ready(batch)?;
    let mut f = Forward::new(store, true);
    let loss = record_loss(model, &mut f, &batch)?;
    let value = f.g.value(loss)[0];
    let (grads, bn) = f.backward(loss)?;
    Ok(StepOutput { loss: value, grads, bn })
}

/// Eval-mode masked MSE pooled over every element of every batch.
pub fn dataset_loss(model: &Avcrn, data: &[Vec<AvExample>], batch_size: usize) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut count = 0.0;
    for group in data.chunks(batch_size.max(1)) {
        let refs: Vec<&[AvExample]> = group.iter().map(Vec::as_slice).collect();
        let batch = make_batch(&refs)?;
        let n: f64 = batch.mask.data().iter().sum();
        sum += forward_loss(model, &model.store, &batch, false)? * n;
        count += n;
    }
    Ok((count > 0.0).then(|| sum / count))
}

/// Masked mean and standard deviation of the mixture log-mel values.
pub fn input_statistics(data: &[Vec<AvExample>]) -> Result<(f64, f64)> {
    let mut n = 0.0;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for ex in data.iter().flatten() {
        for row in ex.mixture.data.chunks(crate::audio::CHUNK_FRAMES) {
            for &v in &row[..ex.mixture.valid_frames] {
                n += 1.0;
                sum += v;
                sq += v * v;
            }
        }
    }
    if n < 2.0 {
        return Err(Error::Degenerate("training set has fewer than two values".into()));
    }
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0);
    if var == 0.0 {
        return Err(Error::Degenerate("training inputs are constant".into()));
    }
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    /// Filled on the last step of each epoch.
    pub val_loss: Option<f64>,
}

pub fn write_loss_csv<W: Write>(mut w: W, history: &[LossRecord]) -> Result<()> {
    writeln!(w, "epoch,step,train_loss,val_loss")?;
    for r in history {
        let val = r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(w, "{},{},{:e},{}", r.epoch, r.step, r.train_loss, val)?;
    }
    Ok(())
}

pub struct TrainOutcome {
    /// Checkpoint with the lowest validation loss (lowest epoch training loss
    /// when there is no validation data).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<LossRecord>,
}

fn diagnostics(store: &ParamStore) -> String {
    let mut norms: Vec<(f64, &String)> = store
        .params()
        .map(|(n, t)| (t.data().iter().map(|v| v * v).sum::<f64>().sqrt(), n))
        .collect();
    norms.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = String::new();
    for (norm, name) in norms.iter().take(5) {
        let _ = write!(out, " {name}={norm:.4e}");
    }
    out
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Trains from `start`, continuing its epoch numbering and optimizer state.
pub fn train(
    start: Checkpoint,
    train_set: &[Vec<AvExample>],
    val_set: &[Vec<AvExample>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.iter().all(Vec::is_empty) {
        return Err(Error::config("data", "training set is empty"));
    }
    let mut model = start.model;
    let mut adam = start.adam.unwrap_or_default();
    if adam.step == 0 {
        let (mean, std) = input_statistics(train_set)?;
        model.set_normalization(mean, std)?;
    }
    let opt = cfg.adam();
    let train_meta = serde_json::to_value(cfg)?;
    let first_epoch = start.epoch + 1;
    let mut history = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut last = None;
    let mut steps = 0usize;

    'epochs: for epoch in first_epoch..first_epoch + cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        let mut stop = false;
        for (b, group) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&[AvExample]> = group.iter().map(|&i| train_set[i].as_slice()).collect();
            let batch = make_batch(&refs)?;
            let fail = |e: Error, store: &ParamStore| {
                Error::Numeric(format!(
                    "epoch {epoch}, batch {b}: {e}; largest parameter norms:{}",
                    diagnostics(store)
                ))
            };
            let mut out = loss_and_grads(&model, &model.store, &batch).map_err(|e| fail(e, &model.store))?;
            if !out.loss.is_finite() {
                return Err(fail(Error::Numeric("loss is not finite".into()), &model.store));
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut out.grads, c);
            }
            adam_step(&mut model.store, &out.grads, &mut adam, &opt)?;
            model.store.apply_bn_updates(&out.bn)?;
            steps += 1;
            epoch_sum += out.loss;
            epoch_batches += 1;
            history.push(LossRecord {
                epoch,
                step: steps,
                train_loss: out.loss,
                val_loss: None,
            });
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                stop = true;
                break;
            }
        }
        let val = dataset_loss(&model, val_set, cfg.batch_size)?;
        if let Some(r) = history.last_mut() {
            r.val_loss = val;
        }
        let ckpt = Checkpoint {
            model: model.clone(),
            epoch,
            val_loss: val,
            adam: Some(adam.clone()),
            train: train_meta.clone(),
        };
        let score = val.unwrap_or(epoch_sum / epoch_batches.max(1) as f64);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, ckpt.clone()));
        }
        last = Some(ckpt);
        if stop {
            break 'epochs;
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch").1,
        last: last.expect("at least one epoch"),
        history,
    })
}

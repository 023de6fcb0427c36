//! Training and validation loop over in-memory samples.

use alloc::format;
use alloc::vec::Vec;

use crate::augment::{augment, AugmentConfig};
use crate::batch::{collate, epoch_batches, epoch_rng, Batch};
use crate::error::{Error, Result};
use crate::losses::{loss_total, tape_loss_total, LossConfig};
use crate::metrics::{compute_metrics, mean_report, DivisorConvention, EvalMask, MetricsReport};
use crate::model::Model;
use crate::optim::{adam_step, AdamConfig, AdamState, LrSchedule};
use crate::synth::Sample;
use crate::tape::Tape;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 2,
            schedule: LrSchedule::default(),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(s.lr0 > 0.0 && s.lr0.is_finite()) || !(s.decay_factor > 0.0 && s.decay_factor <= 1.0) || s.decay_every == 0 {
            return Err(Error::InvalidArgument(format!("invalid learning-rate schedule {s:?}")));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid Adam settings {a:?}")));
        }
        self.loss.weights.validate()?;
        self.augment.validate()
    }
}

/// Model, optimizer state and progress; everything a checkpoint holds.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: Model<f32>, adam: AdamConfig) -> Self {
        let adam = AdamState::new(model.params(), adam);
        Self { model, adam, epoch: 0 }
    }
}

fn forward_batch(model: &Model<f32>, tape: &mut Tape<f32>, batch: &Batch<f32>, trainable: bool) -> Result<(crate::tape::Var, Vec<crate::tape::Var>)> {
    let bound = model.bind(tape, trainable);
    let rgb = tape.constant(batch.rgb.clone());
    let sparse = model.config().fusion_mode.uses_sparse().then(|| tape.constant(batch.sparse.clone()));
    Ok((model.run(tape, &bound, rgb, sparse)?, bound.vars().to_vec()))
}

/// One optimization step; returns the loss before the update.
pub fn train_step(state: &mut TrainState, batch: &Batch<f32>, loss: &LossConfig, lr: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (pred, vars) = forward_batch(&state.model, &mut tape, batch, true)?;
    let target = tape.constant(batch.target.clone());
    let l = tape_loss_total(&mut tape, pred, target, loss)?;
    let value = tape.value(l).item() as f64;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(value, state.adam.step + 1));
    }
    let mut grads = tape.backward(l)?;
    let grads: Vec<_> = vars
        .iter()
        .zip(state.model.params())
        .map(|(&v, p)| grads.take(v).ok_or_else(|| Error::NonFiniteGradient(p.name.clone())))
        .collect::<Result<_>>()?;
    adam_step(state.model.params_mut(), &grads, &mut state.adam, lr)?;
    Ok(value)
}

/// Composite loss of the model on `samples`, without augmentation.
pub fn dataset_loss(model: &Model<f32>, samples: &[Sample], loss: &LossConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let codec = model.config().codec();
    let mut total = 0.0;
    for s in samples {
        let batch = collate::<f32>(&[s], &codec)?;
        let mut tape = Tape::new();
        let (pred, _) = forward_batch(model, &mut tape, &batch, false)?;
        total += loss_total(tape.value(pred), &batch.target, loss)? as f64;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub mean_loss: f64,
}

/// Runs the next epoch. Shuffling and augmentation draws depend only on the
/// seeds and the epoch number, so resuming from a saved state continues the
/// exact same trajectory.
pub fn run_epoch(state: &mut TrainState, samples: &[Sample], cfg: &TrainConfig) -> Result<EpochStats> {
    cfg.validate()?;
    let epoch = state.epoch + 1;
    let lr = cfg.schedule.lr(epoch);
    let batches = epoch_batches(samples.len(), cfg.batch_size, cfg.shuffle_seed, epoch)?;
    if batches.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot fill a batch of {}",
            samples.len(),
            cfg.batch_size
        )));
    }
    let codec = state.model.config().codec();
    let mut aug_rng = epoch_rng(cfg.augment.seed, epoch);
    let mut total = 0.0;
    for idx in &batches {
        let augmented: Vec<Sample> = idx.iter().map(|&i| augment(&samples[i], &cfg.augment, &mut aug_rng)).collect();
        let refs: Vec<&Sample> = augmented.iter().collect();
        let batch = collate(&refs, &codec)?;
        total += train_step(state, &batch, &cfg.loss, lr)?;
    }
    state.epoch = epoch;
    Ok(EpochStats { epoch, lr, steps: batches.len(), mean_loss: total / batches.len() as f64 })
}

/// Per-sample metrics in meters and their per-image mean.
pub fn evaluate(model: &Model<f32>, samples: &[Sample], divisor: DivisorConvention) -> Result<(MetricsReport, Vec<MetricsReport>)> {
    let codec = model.config().codec();
    let mut reports = Vec::with_capacity(samples.len());
    for s in samples {
        let batch = collate::<f32>(&[s], &codec)?;
        let sparse = model.config().fusion_mode.uses_sparse().then_some(&batch.sparse);
        let pred = model.predict_depth(&batch.rgb, sparse)?.remove(0);
        reports.push(compute_metrics(&pred, &s.gt, &EvalMask::from_groundtruth(&s.gt), divisor)?);
    }
    let mean = mean_report(&reports).ok_or_else(|| Error::InvalidArgument("no samples to evaluate".into()))?;
    Ok((mean, reports))
}

//! Adam with global-norm clipping, epoch loop, plateau stopping and
//! evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, EncodedSession};
use crate::error::{Error, Result};
use crate::metrics::{mean_average_accuracy, weighted_log_loss, EvalReport};
use crate::model::{batch_loss, forward, predict, ModelParams};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Data-parallel gradient workers per batch.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 50,
            patience: 3,
            min_delta: 1e-4,
            clip_norm: 5.0,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "train.{name} must be positive, got {v}"
                )));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!(
                    "train.{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return Err(Error::Config("train.min_delta must be non-negative".into()));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("workers", self.workers),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor, canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// One bias-corrected Adam update after clipping. Every tensor, including
/// the shared layer, is updated once.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let names = ModelParams::names();
    if grads.len() != names.len() || state.m.len() != names.len() {
        return Err(Error::contract(format!(
            "adam_step got {} gradients and {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            names.len()
        )));
    }
    for (g, name) in grads.iter().zip(&names) {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter `{name}`"
            )));
        }
    }
    let mut grads = grads.to_vec();
    clip_gradients(&mut grads, cfg.clip_norm);

    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(&grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::dimension("adam_step", p.shape(), g.shape()));
        }
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

fn micro_batch(
    params: &ModelParams,
    sessions: &[&EncodedSession],
    normalizer: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let batch = Batch::from_sessions(sessions)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward(&mut tape, &bound, &batch)?;
    let loss = batch_loss(&mut tape, &out, &batch, normalizer)?;
    tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], bound.gradients(&tape)))
}

/// Mean loss and gradient of a batch. With more than one worker the batch
/// is split into contiguous micro-batches whose gradients are summed in
/// order.
pub fn compute_gradients(
    params: &ModelParams,
    sessions: &[&EncodedSession],
    workers: usize,
) -> Result<(f64, Vec<Tensor>)> {
    if sessions.is_empty() {
        return Err(Error::contract(
            "cannot compute gradients of an empty batch",
        ));
    }
    let n = sessions.len() as f64;
    if workers <= 1 || sessions.len() == 1 {
        return micro_batch(params, sessions, n);
    }
    let chunk = sessions.len().div_ceil(workers);
    let parts = sessions
        .par_chunks(chunk)
        .map(|c| micro_batch(params, c, n))
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("at least one chunk");
    for (l, g) in iter {
        loss += l;
        for (acc, part) in grads.iter_mut().zip(g) {
            acc.data_mut()
                .iter_mut()
                .zip(part.data())
                .for_each(|(a, b)| *a += b);
        }
    }
    Ok((loss, grads))
}

/// Session order for an epoch; depends only on the seed and epoch number,
/// so a resumed run replays the same order.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One pass over shuffled batches. Returns the session-weighted mean
/// training loss.
pub fn train_epoch(
    params: &mut ModelParams,
    state: &mut AdamState,
    sessions: &[EncodedSession],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    if sessions.is_empty() {
        return Err(Error::contract("cannot train on an empty split"));
    }
    let order = epoch_order(sessions.len(), cfg.seed, epoch);
    let mut total = 0.0;
    for idx in order.chunks(cfg.batch_size) {
        let batch: Vec<&EncodedSession> = idx.iter().map(|&i| &sessions[i]).collect();
        let (loss, grads) = compute_gradients(params, &batch, cfg.workers)?;
        adam_step(params, &grads, state, cfg)?;
        total += loss * batch.len() as f64;
    }
    Ok(total / sessions.len() as f64)
}

/// Outcome of the plateau rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub stop: bool,
    /// 1-based epoch with the lowest validation loss (earliest on ties).
    pub best_epoch: usize,
}

/// Stops once `patience` consecutive epochs fail to beat the reference loss
/// by more than `min_delta`. The reference moves only on such an
/// improvement.
pub fn early_stop(history: &[f64], cfg: &TrainConfig) -> Result<StopDecision> {
    let first = *history
        .first()
        .ok_or_else(|| Error::contract("early stopping needs at least one epoch"))?;
    let mut reference = first;
    let mut wait = 0;
    let mut best_epoch = 1;
    let mut best = first;
    for (i, &v) in history.iter().enumerate().skip(1) {
        if v < reference - cfg.min_delta {
            reference = v;
            wait = 0;
        } else {
            wait += 1;
        }
        if v < best {
            best = v;
            best_epoch = i + 1;
        }
    }
    Ok(StopDecision {
        stop: wait >= cfg.patience,
        best_epoch,
    })
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub model: EvalReport,
    pub baseline: EvalReport,
    pub loss: f64,
    /// Per session, in input order.
    pub probs: Vec<Vec<f64>>,
}

/// Per-session probabilities in input order.
pub fn predict_sessions(
    params: &ModelParams,
    sessions: &[EncodedSession],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    let refs: Vec<&EncodedSession> = sessions.iter().collect();
    let parts = refs
        .par_chunks(batch_size)
        .map(|c| params.predict_probs(&Batch::from_sessions(c)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Scores the model and the last-observed-skip baseline on labeled
/// sessions.
pub fn evaluate(
    params: &ModelParams,
    sessions: &[EncodedSession],
    batch_size: usize,
) -> Result<Evaluation> {
    let labels = sessions
        .iter()
        .map(|s| {
            s.labels
                .clone()
                .ok_or_else(|| Error::contract(format!("session `{}` has no labels", s.session_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let probs = predict_sessions(params, sessions, batch_size)?;
    let model_pairs: Vec<(Vec<bool>, Vec<bool>)> = labels
        .iter()
        .cloned()
        .zip(probs.iter().map(|p| predict(p)))
        .collect();
    let baseline_pairs: Vec<(Vec<bool>, Vec<bool>)> = labels
        .iter()
        .zip(sessions)
        .map(|(y, s)| (y.clone(), vec![s.last_first_skip2; y.len()]))
        .collect();
    Ok(Evaluation {
        model: mean_average_accuracy(&model_pairs)?,
        baseline: mean_average_accuracy(&baseline_pairs)?,
        loss: weighted_log_loss(&probs, &labels)?,
        probs,
    })
}

/// One completed epoch as written to the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_maa: f64,
    pub val_first_acc: f64,
}

impl EpochRecord {
    /// Tab-separated log line ending with the wall-clock seconds.
    pub fn log_line(&self, seconds: f64) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            self.epoch, self.train_loss, self.val_loss, self.val_maa, self.val_first_acc, seconds
        )
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainingState {
    pub fn new(params: ModelParams) -> Self {
        let adam = AdamState::new(&params);
        TrainingState {
            params,
            adam,
            epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.val_loss).collect()
    }
}

/// Hooks called by [`fit`] after each epoch.
pub trait EpochObserver {
    /// `is_best` is set when this epoch has the lowest validation loss so far.
    fn epoch_done(
        &mut self,
        state: &TrainingState,
        record: &EpochRecord,
        seconds: f64,
        is_best: bool,
    ) -> Result<()>;
}

impl EpochObserver for () {
    fn epoch_done(&mut self, _: &TrainingState, _: &EpochRecord, _: f64, _: bool) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FitOutcome {
    pub epochs: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains until `max_epochs` or the plateau rule fires, starting from
/// whatever `state` already holds.
pub fn fit<O: EpochObserver>(
    state: &mut TrainingState,
    train: &[EncodedSession],
    validation: &[EncodedSession],
    cfg: &TrainConfig,
    observer: &mut O,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::contract(
            "training needs nonempty train and validation splits",
        ));
    }
    let done = |state: &TrainingState| -> Result<Option<StopDecision>> {
        if state.history.is_empty() {
            return Ok(None);
        }
        Ok(Some(early_stop(&state.val_losses(), cfg)?))
    };
    while state.epoch < cfg.max_epochs {
        if let Some(d) = done(state)? {
            if d.stop {
                break;
            }
        }
        let started = Instant::now();
        let epoch = state.epoch + 1;
        let train_loss = train_epoch(&mut state.params, &mut state.adam, train, cfg, epoch)?;
        let eval = evaluate(&state.params, validation, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: eval.loss,
            val_maa: eval.model.maa,
            val_first_acc: eval.model.first_prediction_accuracy,
        };
        let is_best = state.history.iter().all(|r| eval.loss < r.val_loss);
        state.history.push(record.clone());
        state.epoch = epoch;
        observer.epoch_done(state, &record, started.elapsed().as_secs_f64(), is_best)?;
    }
    let decision = done(state)?.ok_or_else(|| Error::contract("no epochs were run"))?;
    Ok(FitOutcome {
        epochs: state.epoch,
        best_epoch: decision.best_epoch,
        stopped_early: decision.stop,
    })
}

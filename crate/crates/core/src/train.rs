//! Training loop, early stopping and evaluation metrics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{Affine, SeriesBatch, WindowRow};
use crate::model::{rmse_loss, Model};
use crate::optim::Adam;
use crate::params::{derive_seed, seeded};
use crate::tape::{Mode, Tape};
use crate::{Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainSpec {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 3e-4,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2 for batch statistics"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be finite and non-negative"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be positive"));
        }
        if self.patience == 0 || self.patience >= self.max_epochs {
            return Err(Error::config("patience", "must lie in 1..max_epochs"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps", "must be positive when set"));
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Wait,
    Stop,
}

/// Patience counter over validation losses; lower is better.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    wait: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            wait: 0,
            best: None,
        }
    }

    pub fn observe(&mut self, epoch: usize, val: f64) -> Progress {
        match self.best {
            Some((_, b)) if val >= b => {
                self.wait += 1;
                if self.wait >= self.patience {
                    Progress::Stop
                } else {
                    Progress::Wait
                }
            }
            _ => {
                self.best = Some((epoch, val));
                self.wait = 0;
                Progress::Improved
            }
        }
    }

    /// `(epoch, loss)` of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "reason", rename_all = "snake_case"))]
pub enum StopReason {
    Completed,
    EarlyStopped,
    StepLimit,
    /// The loss went non-finite; parameters hold the last best state.
    NonFinite { epoch: usize, step: usize },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the batch RMSE losses.
    pub train_loss: f64,
    /// Pooled RMSE over the validation split, normalized space.
    pub val_loss: f64,
    pub steps: usize,
}

/// Everything about a run that is a function of its inputs; wall-clock
/// times are kept apart in [`Outcome`].
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
    pub stop: StopReason,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub history: History,
    /// Seconds elapsed at the end of each epoch, from the hooks' clock.
    pub wall_seconds: Vec<f64>,
}

/// Callbacks for progress reporting and timing.
pub trait Hooks {
    /// Seconds since an arbitrary origin.
    fn now(&mut self) -> f64 {
        0.0
    }

    fn epoch(&mut self, _record: &EpochRecord) {}
}

pub struct NoHooks;

impl Hooks for NoHooks {}

fn stack<T: Real>(rows: &[WindowRow], idx: &[usize]) -> Result<SeriesBatch<T>> {
    let refs: Vec<&WindowRow> = idx.iter().map(|&i| &rows[i]).collect();
    SeriesBatch::from_rows(&refs)
}

/// Trains `model` in place with Adam on RMSE in normalized space and
/// restores the parameters of the best validation epoch.
///
/// Training rows are reshuffled every epoch; a trailing batch with a single
/// row is dropped since batch statistics need two samples.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_rows: &[WindowRow],
    val_rows: &[WindowRow],
    spec: &TrainSpec,
    hooks: &mut dyn Hooks,
) -> Result<Outcome> {
    spec.validate()?;
    if train_rows.len() < 2 || val_rows.is_empty() {
        return Err(Error::config(
            "data",
            format!("need at least 2 training rows and 1 validation row, got {} and {}", train_rows.len(), val_rows.len()),
        ));
    }
    let t0 = hooks.now();
    let mut adam = Adam::new(spec.lr);
    let mut dropout_rng = seeded(derive_seed(spec.seed, 1));
    let mut stopper = EarlyStopping::new(spec.patience);
    let mut best_store = model.store.clone();
    let mut history = History {
        epochs: Vec::new(),
        best_epoch: None,
        best_val: None,
        stop: StopReason::Completed,
        step_losses: Vec::new(),
    };
    let mut wall = Vec::new();
    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let mut total_steps = 0;

    'epochs: for epoch in 1..=spec.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut seeded(derive_seed(spec.seed, 0x5400 + epoch as u64)));
        let mut losses = Vec::new();
        for (step, chunk) in order.chunks(spec.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let batch = stack::<T>(train_rows, chunk)?;
            let (loss, grads, updates) = {
                let mut tape = Tape::new(&model.store, Mode::Train).with_rng(&mut dropout_rng);
                let past = tape.constant(batch.observed.clone());
                let out = model.forward_tape(&mut tape, &batch, past)?;
                let loss = rmse_loss(&mut tape, out.pred_norm, &out.target_norm)?;
                let value = tape.value(loss).item().as_f64();
                let grads = if value > 0.0 && value.is_finite() {
                    Some(tape.backward(loss)?)
                } else {
                    None
                };
                (value, grads, tape.take_updates())
            };
            if !loss.is_finite() {
                history.stop = StopReason::NonFinite { epoch, step: step + 1 };
                break 'epochs;
            }
            model.store.apply_updates(updates);
            if let Some(g) = grads {
                adam.step(&mut model.store, &g);
            }
            history.step_losses.push(loss);
            losses.push(loss);
            total_steps += 1;
            if spec.max_steps.is_some_and(|m| total_steps >= m) {
                break;
            }
        }
        let val_loss = validation_loss(model, val_rows, spec.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            val_loss,
            steps: losses.len(),
        };
        hooks.epoch(&record);
        history.epochs.push(record);
        wall.push(hooks.now() - t0);
        if !val_loss.is_finite() {
            history.stop = StopReason::NonFinite { epoch, step: losses.len() };
            break;
        }
        match stopper.observe(epoch, val_loss) {
            Progress::Improved => best_store = model.store.clone(),
            Progress::Wait => {}
            Progress::Stop => {
                history.stop = StopReason::EarlyStopped;
                break;
            }
        }
        if spec.max_steps.is_some_and(|m| total_steps >= m) {
            history.stop = StopReason::StepLimit;
            break;
        }
    }
    model.store = best_store;
    if let Some((e, v)) = stopper.best() {
        history.best_epoch = Some(e);
        history.best_val = Some(v);
    }
    Ok(Outcome {
        history,
        wall_seconds: wall,
    })
}

/// Pooled RMSE in normalized space, eval mode.
pub fn validation_loss<T: Real>(model: &Model<T>, rows: &[WindowRow], batch_size: usize) -> Result<f64> {
    let mut sq = 0.0;
    let mut n = 0usize;
    for idx in index_chunks(rows.len(), batch_size) {
        let batch = stack::<T>(rows, &idx)?;
        let mut tape = Tape::new(&model.store, Mode::Eval);
        let past = tape.constant(batch.observed.clone());
        let out = model.forward_tape(&mut tape, &batch, past)?;
        for (p, y) in tape.value(out.pred_norm).data().iter().zip(out.target_norm.data()) {
            let d = (*p - *y).as_f64();
            sq += d * d;
            n += 1;
        }
    }
    Ok(libm::sqrt(sq / n.max(1) as f64))
}

fn index_chunks(n: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    let size = size.max(1);
    (0..n).step_by(size).map(move |s| (s..(s + size).min(n)).collect())
}

/// Forecasts in the rows' (scaled) space, one `[C·f]` vector per row.
pub fn predict<T: Real>(model: &Model<T>, rows: &[WindowRow], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(rows.len());
    for idx in index_chunks(rows.len(), batch_size) {
        let batch = stack::<T>(rows, &idx)?;
        let y = model.forward(&batch, Mode::Eval, None)?;
        let per = y.numel() / idx.len();
        out.extend(y.data().chunks(per).map(|c| c.iter().map(|v| v.as_f64()).collect()));
    }
    Ok(out)
}

/// Last past value repeated over the horizon.
pub fn persistence(rows: &[WindowRow]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            (0..r.channels)
                .flat_map(|c| core::iter::repeat_n(r.observed[c * r.lookback + r.lookback - 1], r.horizon))
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelMetrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    /// Scored elements.
    pub count: usize,
    pub mse: f64,
    pub mae: f64,
    /// Pooled over all elements.
    pub rmse: f64,
    /// Mean over source series of each series' RMSE.
    pub rmse_series_mean: f64,
    pub per_channel: Vec<ChannelMetrics>,
}

/// Scores forecasts after mapping both forecasts and targets back to the
/// original scale with `descale(row, channel)`.
pub fn score(rows: &[WindowRow], preds: &[Vec<f64>], descale: &dyn Fn(&WindowRow, usize) -> Affine) -> Result<Metrics> {
    if rows.is_empty() || rows.len() != preds.len() {
        return Err(Error::config("score", format!("{} rows vs {} forecasts", rows.len(), preds.len())));
    }
    let c = rows[0].channels;
    let mut ch = vec![(0.0, 0.0, 0usize); c];
    let mut series: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (r, p) in rows.iter().zip(preds) {
        if p.len() != r.target.len() || r.channels != c {
            return Err(Error::shape("score", &[p.len()], &[r.target.len()]));
        }
        let s = series.entry(r.series).or_insert((0.0, 0));
        for k in 0..c {
            let a = descale(r, k);
            for j in 0..r.horizon {
                let i = k * r.horizon + j;
                let e = a.invert(p[i]) - a.invert(r.target[i]);
                ch[k].0 += e * e;
                ch[k].1 += e.abs();
                ch[k].2 += 1;
                s.0 += e * e;
                s.1 += 1;
            }
        }
    }
    let count: usize = ch.iter().map(|x| x.2).sum();
    let mse = ch.iter().map(|x| x.0).sum::<f64>() / count as f64;
    let mae = ch.iter().map(|x| x.1).sum::<f64>() / count as f64;
    let rmse_series_mean = series.values().map(|(sq, n)| libm::sqrt(sq / *n as f64)).sum::<f64>() / series.len() as f64;
    Ok(Metrics {
        count,
        mse,
        mae,
        rmse: libm::sqrt(mse),
        rmse_series_mean,
        per_channel: ch
            .iter()
            .map(|&(sq, ab, n)| ChannelMetrics {
                mse: sq / n as f64,
                mae: ab / n as f64,
            })
            .collect(),
    })
}

pub fn evaluate<T: Real>(
    model: &Model<T>,
    rows: &[WindowRow],
    descale: &dyn Fn(&WindowRow, usize) -> Affine,
    batch_size: usize,
) -> Result<Metrics> {
    let preds = predict(model, rows, batch_size)?;
    score(rows, &preds, descale)
}

pub fn persistence_metrics(rows: &[WindowRow], descale: &dyn Fn(&WindowRow, usize) -> Affine) -> Result<Metrics> {
    score(rows, &persistence(rows), descale)
}

//! The training loop: shape-bucketed micro-batches, gradient accumulation
//! up to the nominal batch, per-epoch evaluation, metrics and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{augment, bucket_batches, collate, Sample, ShapeBucket};
use crate::error::{config, Error, Result};
use crate::kernels::linear::softmax;
use crate::nets::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nets::{Mode, Network};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::optim::{Optimizer, OptimizerConfig};
use crate::train::schedule::{PlateauMetric, Schedule, ScheduleConfig};

pub const METRICS_FILE: &str = "metrics.csv";

/// One row of the per-epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    /// `1 − top-1 accuracy` on the evaluation set.
    pub error: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    pub fn is_finite(&self) -> bool {
        [self.train_loss, self.eval_loss, self.error, self.lr, self.seconds]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    /// Mean cross-entropy per sample.
    pub loss: f64,
    pub error: f64,
}

/// Mean-per-sample cross-entropy and error rate in evaluation mode. Buckets
/// run in parallel; their sums are combined in a fixed order.
pub fn evaluate<T: Scalar>(net: &Network<T>, samples: &[Sample], batch_size: usize) -> Result<EvalMetrics> {
    if samples.is_empty() {
        return Err(config("cannot evaluate on an empty sample set"));
    }
    let order: Vec<usize> = (0..samples.len()).collect();
    let buckets = bucket_batches(samples, &order, batch_size.max(1));
    let parts = buckets
        .par_iter()
        .map(|b| -> Result<(f64, usize)> {
            let (x, labels) = collate(samples, &b.samples)?;
            let mut tape = Tape::new();
            let out = net.forward(&mut tape, &x.cast::<T>(), Mode::Eval)?;
            let probs = softmax(tape.value(out.logits));
            let k = probs.shape()[1];
            let mut loss = 0.0;
            let mut wrong = 0;
            for (row, &y) in probs.data().chunks_exact(k).zip(&labels) {
                let row: Vec<f64> = row.iter().map(|p| p.to_f64().unwrap_or(f64::NAN)).collect();
                loss -= row[y].max(f64::MIN_POSITIVE).ln();
                // ties resolve to the lowest index, so a uniform predictor is wrong unless y = 0
                let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                wrong += usize::from(best != y);
            }
            Ok((loss, wrong))
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss, wrong) = parts.iter().fold((0.0, 0), |(l, w), &(pl, pw)| (l + pl, w + pw));
    Ok(EvalMetrics {
        loss: loss / samples.len() as f64,
        error: wrong as f64 / samples.len() as f64,
    })
}

/// One pass over `buckets`. Micro-batches are accumulated while they fit in
/// `batch_size`; gradients are averaged over the accumulated samples before
/// each step. Returns the mean training loss per sample.
pub fn train_epoch<T: Scalar>(
    net: &mut Network<T>,
    samples: &[Sample],
    buckets: &[ShapeBucket],
    opt: &mut Optimizer<T>,
    batch_size: usize,
) -> Result<f64> {
    if buckets.is_empty() {
        return Err(config("no training micro-batches"));
    }
    let mut total_loss = 0.0;
    let mut total = 0usize;
    let mut pending = 0usize;
    net.params.zero_grad();
    for (id, bucket) in buckets.iter().enumerate() {
        let n = bucket.samples.len();
        if pending > 0 && pending + n > batch_size {
            apply_step(net, opt, pending)?;
            pending = 0;
        }
        let (x, labels) = collate(samples, &bucket.samples)?;
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &x.cast::<T>(), Mode::Train)?;
        let loss = tape.softmax_cross_entropy(out.logits, &labels)?;
        let lv = tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
        if !lv.is_finite() {
            return Err(Error::NonFiniteLoss(id));
        }
        tape.backward(loss)?.accumulate_into(&mut net.params);
        net.apply_bn_updates(&out.bn_updates);
        total_loss += lv;
        total += n;
        pending += n;
    }
    apply_step(net, opt, pending)?;
    Ok(total_loss / total as f64)
}

fn apply_step<T: Scalar>(net: &mut Network<T>, opt: &mut Optimizer<T>, count: usize) -> Result<()> {
    net.params.scale_grads(T::one() / T::of(count as f64));
    opt.step(&mut net.params)?;
    net.params.zero_grad();
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub seed: u64,
    /// Mirror and shift images each epoch.
    #[serde(default)]
    pub augment: bool,
    /// Periodic checkpoint interval in epochs; 0 keeps only `last` and `best`.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config("epochs must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(config("batch_size must be ≥ 1"));
        }
        self.optimizer.validate()?;
        self.schedule.validate()
    }
}

/// Trainer state carried across epochs and through checkpoints.
pub struct Trainer<T> {
    pub net: Network<T>,
    pub opt: Optimizer<T>,
    pub schedule: Schedule,
    pub config: FitConfig,
    pub metrics: Vec<EpochMetrics>,
    /// Directory for `metrics.csv` and `checkpoints/`; nothing is written without one.
    pub out_dir: Option<PathBuf>,
    best_eval: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ResumeInfo {
    schedule: Schedule,
    config: FitConfig,
    best_eval: Option<f64>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(net: Network<T>, config: FitConfig, out_dir: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let opt = Optimizer::new(config.optimizer, &net.params)?;
        let schedule = Schedule::new(config.schedule.clone(), config.optimizer.lr())?;
        Ok(Self {
            net,
            opt,
            schedule,
            config,
            metrics: Vec::new(),
            out_dir,
            best_eval: None,
        })
    }

    /// Restore from `out_dir/checkpoints/last`, keeping the metrics rows of
    /// completed epochs. `epochs` may be raised beyond the saved value.
    pub fn resume(out_dir: PathBuf, epochs: usize) -> Result<Self> {
        let ckpt = load_checkpoint::<T>(out_dir.join("checkpoints").join("last"))?;
        let info: ResumeInfo = serde_json::from_value(ckpt.extra)?;
        let mut config = info.config;
        config.epochs = epochs.max(ckpt.epoch);
        let mut opt = Optimizer::new(config.optimizer, &ckpt.network.params)?;
        opt.load_state(&ckpt.network.params, &ckpt.state)?;
        let metrics_path = out_dir.join(METRICS_FILE);
        let mut metrics = if metrics_path.exists() {
            read_metrics(&metrics_path)?
        } else {
            Vec::new()
        };
        metrics.truncate(ckpt.epoch);
        Ok(Self {
            net: ckpt.network,
            opt,
            schedule: info.schedule,
            config,
            metrics,
            out_dir: Some(out_dir),
            best_eval: info.best_eval,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.metrics.len()
    }

    fn save(&self, name: &str) -> Result<()> {
        let Some(dir) = &self.out_dir else { return Ok(()) };
        let state = self.opt.state(&self.net.params);
        let refs: Vec<(String, &Tensor<T>)> = state.iter().map(|(n, t)| (n.clone(), t)).collect();
        let extra = serde_json::to_value(ResumeInfo {
            schedule: self.schedule.clone(),
            config: self.config.clone(),
            best_eval: self.best_eval,
        })?;
        save_checkpoint(
            dir.join("checkpoints").join(name),
            &self.net,
            &refs,
            self.epochs_done(),
            extra,
        )
    }

    /// Train and evaluate one epoch, update the schedule, log and checkpoint.
    pub fn run_epoch(&mut self, train: &[Sample], eval: &[Sample]) -> Result<EpochMetrics> {
        let epoch = self.epochs_done();
        let start = Instant::now();
        let lr = self.schedule.lr_for_epoch(epoch);
        self.opt.set_lr(lr);

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(self.config.seed, Stream::Shuffle, epoch as u64));
        let augmented;
        let data = if self.config.augment {
            let mut rng = stream(self.config.seed, Stream::Augment, epoch as u64);
            augmented = train
                .iter()
                .map(|s| {
                    if s.features.rank() == 3 {
                        augment(s, &mut rng)
                    } else {
                        Ok(s.clone())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            &augmented[..]
        } else {
            train
        };
        let buckets = bucket_batches(data, &order, self.config.batch_size);
        let train_loss = train_epoch(&mut self.net, data, &buckets, &mut self.opt, self.config.batch_size)?;
        let ev = evaluate(&self.net, eval, self.config.batch_size)?;

        let monitored = match self.schedule.metric() {
            PlateauMetric::EvalLoss => ev.loss,
            PlateauMetric::TrainLoss => train_loss,
        };
        self.schedule.update(epoch, monitored);
        let row = EpochMetrics {
            epoch,
            train_loss,
            eval_loss: ev.loss,
            error: ev.error,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.metrics.push(row.clone());

        if let Some(dir) = &self.out_dir {
            fs::create_dir_all(dir)?;
            write_metrics(dir.join(METRICS_FILE), &self.metrics)?;
            if self.best_eval.is_none_or(|b| ev.loss < b) {
                self.best_eval = Some(ev.loss);
                self.save("best")?;
            }
            let done = self.epochs_done();
            if self.config.checkpoint_every > 0 && done.is_multiple_of(self.config.checkpoint_every) {
                self.save(&format!("epoch_{done:04}"))?;
            }
            self.save("last")?;
        }
        Ok(row)
    }

    /// Run the remaining epochs, reporting each finished row to `on_epoch`.
    pub fn fit(&mut self, train: &[Sample], eval: &[Sample], mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<()> {
        while self.epochs_done() < self.config.epochs {
            let row = self.run_epoch(train, eval)?;
            on_epoch(&row);
        }
        Ok(())
    }
}

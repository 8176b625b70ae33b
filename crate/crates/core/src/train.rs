//! Minibatch training and evaluation.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Sgd};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::losses::SlowLossReduction;
use crate::model::Model;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    /// Cosine decay from `lr` to zero over all steps of the run.
    #[default]
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: Scalar,
    pub momentum: Scalar,
    pub weight_decay: Scalar,
    pub schedule: Schedule,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<Scalar>,
    /// Weight of the slow neural loss.
    pub alpha: Scalar,
    pub slow_loss_reduction: SlowLossReduction,
    /// Evaluation runs over fixed, unshuffled chunks of this size.
    pub eval_batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Schedule::Cosine,
            grad_clip: Some(5.0),
            alpha: 0.1,
            slow_loss_reduction: SlowLossReduction::Mean,
            eval_batch_size: 100,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("epochs and batch sizes must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Sgd::new(self.lr, self.momentum, self.weight_decay).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Learning rate for global step `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> Scalar {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                (self.lr as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as Scalar
            }
        }
    }
}

/// Batch-size-weighted means over one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub ce: f64,
    pub ls: f64,
}

/// Owns the optimizer state across epochs.
pub struct Trainer {
    pub cfg: TrainConfig,
    opt: Sgd,
    step: usize,
    total_steps: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, train_len: usize) -> Result<Self> {
        cfg.validate()?;
        let opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay)?;
        let total_steps = cfg.epochs * train_len.div_ceil(cfg.batch_size);
        Ok(Trainer { cfg, opt, step: 0, total_steps })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// One pass over `ds` in the order fixed by `shuffle_seed + epoch`.
    pub fn train_epoch(&mut self, model: &Model, store: &mut ParamStore, ds: &Dataset, epoch: usize) -> Result<EpochStats> {
        let cfg = &self.cfg;
        let mut sums = [0.0f64; 3];
        let mut seen = 0usize;
        let seed = cfg.shuffle_seed.wrapping_add(epoch as u64);
        for (x, labels) in batches(ds, cfg.batch_size, Some(seed)) {
            let mut g = Graph::new();
            let xv = g.constant(x);
            let out = model.loss(&mut g, store, xv, &labels, cfg.alpha, cfg.slow_loss_reduction)?;
            let vals = [g.value(out.total).item(), g.value(out.ce).item(), g.value(out.ls).item()];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("loss at step {} is {}", self.step, vals[0])));
            }
            let mut grads = g.param_grads(out.total, store)?;
            drop(g);
            let norm = grads.norm_sq().sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("gradient norm at step {} is {norm}", self.step)));
            }
            if let Some(c) = cfg.grad_clip {
                if norm > c as f64 {
                    grads.scale((c as f64 / norm) as Scalar);
                }
            }
            self.opt.lr = cfg.lr_at(self.step, self.total_steps);
            self.opt.step(store, &grads)?;
            self.step += 1;
            let b = labels.len();
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v as f64 * b as f64;
            }
            seen += b;
        }
        let n = seen.max(1) as f64;
        Ok(EpochStats { loss: sums[0] / n, ce: sums[1] / n, ls: sums[2] / n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `None` for classes absent from the data.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("true");
        for j in 0..k {
            s.push_str(&format!(",pred_{j}"));
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&i.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn argmax(row: &[Scalar]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, Scalar::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Top-1 accuracy, per-class accuracy and confusion matrix over `ds`.
pub fn evaluate(model: &Model, store: &ParamStore, ds: &Dataset, eval_batch_size: usize) -> Result<EvalReport> {
    let logits = model.predict(store, &ds.images, eval_batch_size)?;
    let k = logits.shape()[1];
    if k != ds.num_classes {
        return Err(Error::shape("evaluate", &[ds.num_classes], &[k]));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (row, &label) in logits.data().chunks_exact(k).zip(&ds.labels) {
        confusion[label][argmax(row)] += 1;
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect();
    let total = ds.len();
    Ok(EvalReport { accuracy: correct as f64 / total.max(1) as f64, correct, total, per_class, confusion })
}

/// Mean and variance of one channel over samples and positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStat {
    pub mean: f64,
    pub var: f64,
}

/// Channel statistics of the last block's output over `ds`, computed in the
/// same fixed chunks as [`evaluate`]. Without blocks the stem output is used.
pub fn channel_stats(model: &Model, store: &ParamStore, ds: &Dataset, eval_batch_size: usize) -> Result<Vec<ChannelStat>> {
    let mut sums: Vec<(f64, f64)> = Vec::new();
    let mut count = 0usize;
    let n = ds.len();
    let mut start = 0;
    while start < n {
        let len = eval_batch_size.max(1).min(n - start);
        let mut g = Graph::no_grad();
        let xv = g.constant(ds.images.narrow(0, start, len)?);
        let out = model.forward(&mut g, store, xv)?;
        let Some(tap) = out.taps.last() else {
            return Err(Error::Config("channel statistics need at least one block".into()));
        };
        let f = g.value(tap.feature);
        let c = f.shape()[1];
        let inner: usize = f.shape()[2..].iter().product();
        sums.resize(c, (0.0, 0.0));
        for (i, chunk) in f.data().chunks_exact(inner).enumerate() {
            let s = &mut sums[i % c];
            for &v in chunk {
                s.0 += v as f64;
                s.1 += (v as f64) * (v as f64);
            }
        }
        count += len * inner;
        start += len;
    }
    let m = count.max(1) as f64;
    Ok(sums
        .into_iter()
        .map(|(s, q)| {
            let mean = s / m;
            ChannelStat { mean, var: (q / m - mean * mean).max(0.0) }
        })
        .collect())
}

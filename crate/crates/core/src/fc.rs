//! Softmax-regression baseline: a linear head trained by mini-batch gradient
//! descent with momentum, in f32.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EmbeddingData;
use crate::model::LinearHead;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Step size `lr · ½(1 + cos(π t / T))` over all `T` steps.
    Cosine,
    Constant,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Cosine => "cosine",
            Schedule::Constant => "constant",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Schedule::Cosine),
            "constant" => Ok(Schedule::Constant),
            other => Err(Error::InvalidConfig(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Stop once validation accuracy varies by at most `tolerance` over the last
/// `window` epochs, or after `max_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub window: usize,
    pub tolerance: f64,
    pub max_epochs: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence {
            window: 5,
            tolerance: 0.01,
            max_epochs: 50,
        }
    }
}

impl Convergence {
    fn reached(&self, history: &[f64]) -> bool {
        if history.len() < self.window {
            return false;
        }
        let tail = &history[history.len() - self.window..];
        let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub schedule: Schedule,
    pub seed: u64,
    /// When set, `epochs` is ignored in favour of the convergence rule.
    pub convergence: Option<Convergence>,
}

impl Default for FcConfig {
    fn default() -> Self {
        FcConfig {
            epochs: 1,
            batch_size: 512,
            learning_rate: 1.0,
            momentum: 0.9,
            schedule: Schedule::Cosine,
            seed: 0,
            convergence: None,
        }
    }
}

impl FcConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.batch_size == 0 {
            return fail("batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        match self.convergence {
            Some(c) if c.window == 0 || c.max_epochs == 0 => fail("bad convergence rule"),
            None if self.epochs == 0 => fail("epochs must be positive"),
            _ => Ok(()),
        }
    }

    fn planned_epochs(&self) -> usize {
        self.convergence.map_or(self.epochs, |c| c.max_epochs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches, measured before each step.
    pub loss: f64,
    pub val_accuracy: Option<f64>,
    pub nanos: u64,
}

#[derive(Debug, Clone)]
pub struct FcRun {
    pub head: LinearHead,
    pub epochs: Vec<EpochLog>,
    /// Wall time spent in training steps, excluding validation.
    pub train_nanos: u64,
    /// Epoch at which the convergence rule fired, if it did.
    pub converged_at: Option<usize>,
}

impl FcRun {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }
}

struct Trainer {
    w: Array2<f32>,
    b: Array1<f32>,
    vw: Array2<f32>,
    vb: Array1<f32>,
}

impl Trainer {
    fn new(n: usize, d: usize) -> Self {
        Trainer {
            w: Array2::zeros((n, d)),
            b: Array1::zeros(n),
            vw: Array2::zeros((n, d)),
            vb: Array1::zeros(n),
        }
    }

    fn logits(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        x.dot(&self.w.t()) + &self.b
    }

    /// One momentum step on a batch; returns the batch loss before the step.
    fn step(&mut self, x: ArrayView2<'_, f32>, y: &[u32], lr: f32, momentum: f32) -> f64 {
        let m = x.nrows() as f32;
        let mut g = self.logits(x);
        let mut loss = 0.0f64;
        for (mut row, &label) in g.rows_mut().into_iter().zip(y) {
            let top = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            row.mapv_inplace(|v| (v - top).exp());
            let sum: f32 = row.sum();
            row /= sum;
            let p = row[label as usize];
            loss -= f64::from(p.max(f32::MIN_POSITIVE)).ln();
            row[label as usize] = p - 1.0;
        }
        g /= m;
        let grad_w = g.t().dot(&x);
        let grad_b = g.sum_axis(Axis(0));
        self.vw.zip_mut_with(&grad_w, |v, &gr| *v = momentum * *v + gr);
        self.vb.zip_mut_with(&grad_b, |v, &gr| *v = momentum * *v + gr);
        self.w.scaled_add(-lr, &self.vw);
        self.b.scaled_add(-lr, &self.vb);
        loss / f64::from(m)
    }

    fn accuracy(&self, data: &EmbeddingData) -> f64 {
        let mut correct = 0usize;
        for (chunk, ys) in data
            .embeddings
            .axis_chunks_iter(Axis(0), 1024)
            .zip(data.labels.chunks(1024))
        {
            let logits = self.logits(chunk);
            for (row, &y) in logits.rows().into_iter().zip(ys) {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                correct += (best == y as usize) as usize;
            }
        }
        correct as f64 / data.len().max(1) as f64
    }

    fn into_head(self) -> Result<LinearHead> {
        LinearHead::new(self.w.mapv(f64::from), self.b.mapv(f64::from))
    }
}

/// Train a softmax-regression head on `train`. Validation accuracy is logged
/// per epoch when `val` is given; the convergence rule requires it.
pub fn train_fc(train: &EmbeddingData, val: Option<&EmbeddingData>, config: &FcConfig) -> Result<FcRun> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    if config.convergence.is_some() && val.is_none() {
        return Err(Error::InvalidConfig("convergence rule needs a validation set".into()));
    }
    if let Some(v) = val {
        if v.dim() != train.dim() {
            return Err(Error::DimensionMismatch {
                expected: train.dim(),
                got: v.dim(),
            });
        }
    }
    let (n, d, len) = (train.num_classes as usize, train.dim(), train.len());
    let mut trainer = Trainer::new(n, d);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..len).collect();
    let steps_per_epoch = len.div_ceil(config.batch_size);
    let total_steps = (config.planned_epochs() * steps_per_epoch) as f64;

    let mut logs = Vec::new();
    let mut history = Vec::new();
    let mut train_nanos = 0u64;
    let mut converged_at = None;
    let mut step = 0usize;
    for epoch in 0..config.planned_epochs() {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let x = train.embeddings.select(Axis(0), idx);
            let y: Vec<u32> = idx.iter().map(|&i| train.labels[i]).collect();
            let lr = match config.schedule {
                Schedule::Constant => config.learning_rate,
                Schedule::Cosine => {
                    config.learning_rate * (0.5 * (1.0 + (PI * step as f64 / total_steps).cos())) as f32
                }
            };
            let loss = trainer.step(x.view(), &y, lr, config.momentum);
            if !loss.is_finite() || trainer.w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            loss_sum += loss;
            step += 1;
        }
        let nanos = start.elapsed().as_nanos() as u64;
        train_nanos += nanos;
        let val_accuracy = val.map(|v| trainer.accuracy(v));
        logs.push(EpochLog {
            epoch,
            loss: loss_sum / steps_per_epoch as f64,
            val_accuracy,
            nanos,
        });
        if let (Some(rule), Some(acc)) = (config.convergence, val_accuracy) {
            history.push(acc);
            if rule.reached(&history) {
                converged_at = Some(epoch + 1);
                break;
            }
        }
    }
    Ok(FcRun {
        head: trainer.into_head()?,
        epochs: logs,
        train_nanos,
        converged_at,
    })
}

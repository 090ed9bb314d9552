//! Line-delimited JSON records. Every record carries a `record` tag and the
//! full configuration it was produced under.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// Serialize `value` as one JSON line on `out`.
pub fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

pub fn emit<T: Serialize>(value: &T) -> std::io::Result<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    write_line(&mut lock, value)?;
    lock.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    pub test_samples: usize,
    pub mean_scale: f64,
    pub seed: u64,
}

/// Wall times of the competing training paths, in nanoseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTimes {
    /// Softmax-regression head, one epoch.
    pub fc_epoch: u64,
    /// Softmax-regression head, trained until the convergence rule fires.
    pub fc_converged: Option<u64>,
    pub fc_converged_epochs: Option<usize>,
    /// Per-sample streaming LDA with plastic covariance.
    pub slda_bs1: u64,
    /// Batched LDA with plastic covariance (chunk semantics).
    pub xlda_plastic: u64,
    /// Batched LDA with fixed covariance: mean updates only.
    pub xlda_fixed: u64,
    /// Median per-batch time of the mean update.
    pub xlda_mean_update_median: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainAccuracy {
    pub fc: f64,
    pub fc_converged: Option<f64>,
    pub slda_bs1: f64,
    pub xlda_plastic: f64,
    pub xlda_fixed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedups {
    /// FC one epoch over batched plastic LDA.
    pub fc_vs_xlda: f64,
    /// FC to convergence over batched plastic LDA.
    pub fc_converged_vs_xlda: Option<f64>,
    /// Per-sample LDA over batched plastic LDA.
    pub slda_vs_xlda: f64,
}

impl Speedups {
    pub fn from_times(t: &TrainTimes) -> Self {
        let xlda = t.xlda_plastic.max(1) as f64;
        Speedups {
            fc_vs_xlda: t.fc_epoch as f64 / xlda,
            fc_converged_vs_xlda: t.fc_converged.map(|c| c as f64 / xlda),
            slda_vs_xlda: t.slda_bs1 as f64 / xlda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub record: String,
    pub dataset: DatasetInfo,
    pub batch_size: usize,
    pub fc_learning_rate: f32,
    pub times_nanos: TrainTimes,
    pub accuracy: TrainAccuracy,
    pub speedup: Speedups,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub record: String,
    pub classes: usize,
    pub dim: usize,
    pub queries: usize,
    pub k: usize,
    pub tables: usize,
    pub bits: usize,
    pub probes: usize,
    pub seed: u64,
    pub build_nanos: u64,
    pub exact_median_nanos: u64,
    pub active_median_nanos: u64,
    pub exact_mean_nanos: f64,
    pub active_mean_nanos: f64,
    pub speedup_median: f64,
    pub speedup_mean: f64,
    pub agreement: f64,
}

//! Batch-parallel training: one mean update per class per batch, with an
//! exactness contract against the per-sample recurrences.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CovarianceMode, LabeledBatch, LdaModel, TrainMode};

/// Rows per group below which the per-class sums are not worth spreading
/// over the thread pool.
const PARALLEL_MIN_WORK: usize = 1 << 15;

/// Histogram of one batch's labels, sorted by label.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelCounts(Vec<(u32, usize)>);

impl LabelCounts {
    pub fn get(&self, label: u32) -> Option<usize> {
        self.0
            .binary_search_by_key(&label, |&(l, _)| l)
            .ok()
            .map(|i| self.0[i].1)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|&(_, s)| s).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, usize)> + '_ {
        self.0.iter().copied()
    }
}

/// Unique labels and their multiplicities.
pub fn unique_counts(labels: &[u32], num_classes: usize) -> Result<LabelCounts> {
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad as u64,
            num_classes,
        });
    }
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(u32, usize)> = Vec::new();
    for l in sorted {
        match out.last_mut() {
            Some((last, s)) if *last == l => *s += 1,
            _ => out.push((l, 1)),
        }
    }
    Ok(LabelCounts(out))
}

/// Row indices of a batch grouped by label; rows keep batch order inside a group.
struct Groups {
    labels: Vec<u32>,
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl Groups {
    fn new(labels: &[u32]) -> Self {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&i| labels[i]);
        let mut group_labels = Vec::new();
        let mut starts = Vec::new();
        for (pos, &i) in order.iter().enumerate() {
            if group_labels.last() != Some(&labels[i]) {
                group_labels.push(labels[i]);
                starts.push(pos);
            }
        }
        starts.push(order.len());
        Groups {
            labels: group_labels,
            starts,
            order,
        }
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn members(&self, g: usize) -> &[usize] {
        &self.order[self.starts[g]..self.starts[g + 1]]
    }
}

/// Accumulate the rows of group `g` into `out`, in batch order.
fn sum_group(batch: &LabeledBatch, groups: &Groups, g: usize, out: &mut [f64]) {
    for &i in groups.members(g) {
        for (o, v) in out.iter_mut().zip(batch.row(i)) {
            *o += v;
        }
    }
}

/// Per-group row sums `S_i` (u × d), computed in parallel across groups.
fn parallel_group_sums(batch: &LabeledBatch, groups: &Groups) -> Array2<f64> {
    let d = batch.dim();
    let mut sums = Array2::<f64>::zeros((groups.len(), d));
    sums.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(g, out)| sum_group(batch, groups, g, out));
    sums
}

/// Groups between a mean-row prefetch and its use.
const PREFETCH_AHEAD: usize = 4;

/// Hint that `row` is about to be read and written. Mean rows and counts of
/// large models live outside the cache; fetching them a few groups early
/// hides most of the miss.
#[inline]
fn prefetch_row<T>(row: &[T]) {
    #[cfg(target_arch = "x86_64")]
    for line in row.chunks((64 / std::mem::size_of::<T>()).max(1)) {
        // SAFETY: prefetching has no architectural effect and the pointer is in bounds.
        unsafe { std::arch::x86_64::_mm_prefetch::<{ std::arch::x86_64::_MM_HINT_T0 }>(line.as_ptr().cast()) }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = row;
}

/// `μ ← μ + (S − sμ)/C` for one class row.
fn fold_sum(mean: &mut [f64], sum: &[f64], s: u64, total: u64) {
    let (sf, cf) = (s as f64, total as f64);
    for (m, &v) in mean.iter_mut().zip(sum) {
        *m += (v - sf * *m) / cf;
    }
}

impl LdaModel {
    /// Class-wise batched mean update: `C_i ← c_i + s_i`,
    /// `μ_i ← μ_i + (S_i − s_i μ_i)/C_i`. Classes absent from the batch are
    /// untouched.
    pub fn batch_update_means(&mut self, batch: &LabeledBatch) -> Result<()> {
        if !self.train_mode.trains_mu() {
            return Err(Error::ModelFrozen(self.train_mode.name()));
        }
        batch.validate(self.dim(), self.num_classes())?;
        if batch.is_empty() {
            return Ok(());
        }
        self.apply_batch_means(batch, &Groups::new(batch.labels()));
        Ok(())
    }

    fn apply_batch_means(&mut self, batch: &LabeledBatch, groups: &Groups) {
        let d = self.dim();
        let means = self.stats.means.as_slice_mut().expect("standard layout");
        let counts = &mut self.stats.counts;
        let fold = |means: &mut [f64], counts: &mut [u64], g: usize, sum: &[f64]| {
            let k = groups.labels[g] as usize;
            let s = groups.members(g).len() as u64;
            let total = counts[k] + s;
            fold_sum(&mut means[k * d..(k + 1) * d], sum, s, total);
            counts[k] = total;
        };
        if batch.len() * d >= PARALLEL_MIN_WORK && rayon::current_num_threads() > 1 {
            let sums = parallel_group_sums(batch, groups);
            for g in 0..groups.len() {
                fold(means, counts, g, sums.row(g).as_slice().expect("standard layout"));
            }
        } else {
            // One reusable row: no per-batch buffer proportional to the batch.
            let mut sum = vec![0.0; d];
            for g in 0..groups.len() {
                if g + PREFETCH_AHEAD < groups.len() {
                    let next = groups.labels[g + PREFETCH_AHEAD] as usize;
                    prefetch_row(&means[next * d..(next + 1) * d]);
                    prefetch_row(&counts[next..next + 1]);
                }
                sum.fill(0.0);
                sum_group(batch, groups, g, &mut sum);
                fold(means, counts, g, &sum);
            }
        }
        self.revision += 1;
    }

    /// Batched covariance (and mean) update.
    ///
    /// `Exact` replays the per-sample recurrence in arrival order. `Chunk`
    /// takes every residual against the pre-batch class means, applies
    /// `Σ ← (tΣ + ΣΔ)/(t+m)` once, then the batched mean update.
    pub fn batch_update_covariance(
        &mut self,
        batch: &LabeledBatch,
        semantics: Semantics,
    ) -> Result<()> {
        if self.covariance.mode == CovarianceMode::Fixed {
            return Err(Error::CovarianceFixed);
        }
        if !self.train_mode.trains_sigma() {
            return Err(Error::ModelFrozen(self.train_mode.name()));
        }
        batch.validate(self.dim(), self.num_classes())?;
        if batch.is_empty() {
            return Ok(());
        }
        match semantics {
            Semantics::Exact => {
                for (i, &y) in batch.labels().iter().enumerate() {
                    self.apply_sample(batch.row(i), y as usize);
                }
            }
            Semantics::Chunk => {
                self.chunk_covariance(batch);
                if self.train_mode.trains_mu() {
                    self.apply_batch_means(batch, &Groups::new(batch.labels()));
                }
                self.revision += 1;
            }
        }
        Ok(())
    }

    fn chunk_covariance(&mut self, batch: &LabeledBatch) {
        let (m, d) = (batch.len(), self.dim());
        let t0 = self.covariance.step;
        let mut residuals = Array2::<f64>::zeros((m, d));
        let mut weighted = Array2::<f64>::zeros((m, d));
        for (i, &y) in batch.labels().iter().enumerate() {
            let t = (t0 + i as u64) as f64;
            let w = t / (t + 1.0);
            let mean = self.stats.mean(y as usize);
            let mut r = residuals.row_mut(i);
            let mut rw = weighted.row_mut(i);
            for j in 0..d {
                let v = batch.row(i)[j] - mean[j];
                r[j] = v;
                rw[j] = w * v;
            }
        }
        let delta_sum = weighted.t().dot(&residuals);
        let t = t0 as f64;
        let inv = 1.0 / (t + m as f64);
        let sigma = &mut self.covariance.sigma;
        sigma.zip_mut_with(&delta_sum, |s, &delta| *s = (t * *s + delta) * inv);
        linalg::symmetrize(sigma);
        self.covariance.step += m as u64;
    }

    /// Update every component the model's modes permit with one batch.
    pub fn ingest_batch(&mut self, batch: &LabeledBatch, semantics: Semantics) -> Result<()> {
        if self.train_mode == TrainMode::Frozen {
            return Err(Error::ModelFrozen(self.train_mode.name()));
        }
        let sigma_plastic = self.train_mode.trains_sigma()
            && self.covariance.mode == CovarianceMode::Plastic;
        if sigma_plastic {
            self.batch_update_covariance(batch, semantics)
        } else if self.train_mode.trains_mu() {
            self.batch_update_means(batch)
        } else {
            batch.validate(self.dim(), self.num_classes())
        }
    }
}

/// How a batch's covariance contribution is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    Exact,
    Chunk,
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Semantics::Exact => "exact",
            Semantics::Chunk => "chunk",
        })
    }
}

impl FromStr for Semantics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Semantics::Exact),
            "chunk" => Ok(Semantics::Chunk),
            other => Err(Error::InvalidConfig(format!("unknown semantics {other:?}"))),
        }
    }
}

/// Wall time spent in model updates, per batch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub batch_nanos: Vec<u64>,
    pub batch_sizes: Vec<usize>,
    pub total_nanos: u64,
    pub samples: u64,
}

impl TimingReport {
    pub fn total(&self) -> Duration {
        Duration::from_nanos(self.total_nanos)
    }

    pub fn median_batch_nanos(&self) -> u64 {
        median(&self.batch_nanos)
    }

    fn record(&mut self, nanos: u64, size: usize) {
        self.batch_nanos.push(nanos);
        self.batch_sizes.push(size);
        self.total_nanos += nanos;
        self.samples += size as u64;
    }
}

pub(crate) fn median(values: &[u64]) -> u64 {
    if values.is_empty() {
        return 0;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    v[v.len() / 2]
}

/// Fold a stream of batches into `model`, timing only the updates.
pub fn ingest_stream<I>(model: &mut LdaModel, batches: I, semantics: Semantics) -> Result<TimingReport>
where
    I: IntoIterator<Item = Result<LabeledBatch>>,
{
    let mut report = TimingReport::default();
    for batch in batches {
        let batch = batch?;
        let start = Instant::now();
        model.ingest_batch(&batch, semantics)?;
        report.record(start.elapsed().as_nanos() as u64, batch.len());
    }
    Ok(report)
}

/// Per-sample ingestion (batch size one), timed as a single batch per sample.
pub fn ingest_per_sample(model: &mut LdaModel, x: ArrayView2<'_, f64>, labels: &[u32]) -> Result<TimingReport> {
    let mut report = TimingReport::default();
    for (row, &y) in x.rows().into_iter().zip(labels) {
        let row = row.to_vec();
        let start = Instant::now();
        model.update_sample(&row, y as usize)?;
        report.record(start.elapsed().as_nanos() as u64, 1);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn empty(d: usize, n: usize, mode: CovarianceMode) -> LdaModel {
        LdaModel::init_empty(d, n, mode, TrainMode::TrainBoth).unwrap()
    }

    #[test]
    fn unique_counts_examples() {
        let u = unique_counts(&[2, 2, 5], 6).unwrap();
        assert_eq!(u.iter().collect::<Vec<_>>(), vec![(2, 2), (5, 1)]);
        assert_eq!(u.get(2), Some(2));
        assert_eq!(u.get(3), None);
        assert!(unique_counts(&[], 3).unwrap().is_empty());
        assert!(matches!(
            unique_counts(&[0, 3], 3),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn identical_samples_batch() {
        let mut m = empty(2, 2, CovarianceMode::Fixed);
        let b = LabeledBatch::new(array![[6.0, 0.0], [6.0, 0.0], [6.0, 0.0]], vec![1, 1, 1]).unwrap();
        m.batch_update_means(&b).unwrap();
        assert_eq!(m.stats().mean(1), &[6.0, 0.0]);
        assert_eq!(m.stats().counts(), &[0, 3]);
    }

    #[test]
    fn empty_batch_is_noop() {
        let mut m = empty(2, 2, CovarianceMode::Plastic);
        m.update_sample(&[1.0, 1.0], 0).unwrap();
        let before = m.clone();
        m.batch_update_means(&LabeledBatch::empty(2)).unwrap();
        m.batch_update_covariance(&LabeledBatch::empty(2), Semantics::Chunk).unwrap();
        assert_eq!(m.stats(), before.stats());
        assert_eq!(m.covariance(), before.covariance());
    }

    #[test]
    fn single_sample_chunk_equals_exact_equals_update() {
        let mut base = empty(3, 2, CovarianceMode::Plastic);
        base.update_sample(&[0.5, -1.0, 2.0], 1).unwrap();
        base.update_sample(&[1.5, 0.0, -2.0], 0).unwrap();
        let b = LabeledBatch::new(array![[0.25, 3.0, -1.0]], vec![1]).unwrap();

        let mut chunk = base.clone();
        chunk.batch_update_covariance(&b, Semantics::Chunk).unwrap();
        let mut exact = base.clone();
        exact.batch_update_covariance(&b, Semantics::Exact).unwrap();
        let mut single = base.clone();
        single.update_sample(b.row(0), 1).unwrap();

        for m in [&chunk, &exact] {
            assert_eq!(m.stats(), single.stats());
            assert_eq!(m.covariance().step(), single.covariance().step());
            let diff = (&m.covariance().sigma() - &single.covariance().sigma())
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(diff < 1e-15, "{diff}");
        }
    }

    #[test]
    fn covariance_errors() {
        let mut m = empty(2, 2, CovarianceMode::Fixed);
        let b = LabeledBatch::new(array![[1.0, 2.0]], vec![0]).unwrap();
        assert!(matches!(
            m.batch_update_covariance(&b, Semantics::Exact),
            Err(Error::CovarianceFixed)
        ));
        let mut m = empty(2, 2, CovarianceMode::Plastic);
        let bad = LabeledBatch::new(array![[1.0, 2.0]], vec![4]).unwrap();
        assert!(matches!(
            m.batch_update_covariance(&bad, Semantics::Chunk),
            Err(Error::LabelOutOfRange { .. })
        ));
        m.set_train_mode(TrainMode::TrainMuOnly);
        assert!(matches!(
            m.batch_update_covariance(&b, Semantics::Chunk),
            Err(Error::ModelFrozen(_))
        ));
    }

    #[test]
    fn failed_batch_leaves_model_untouched() {
        let mut m = empty(2, 2, CovarianceMode::Plastic);
        let before = m.clone();
        let b = LabeledBatch::new(array![[1.0, 2.0], [f64::NAN, 0.0]], vec![0, 1]).unwrap();
        assert!(m.batch_update_means(&b).is_err());
        assert!(m.batch_update_covariance(&b, Semantics::Exact).is_err());
        assert_eq!(m, before);
    }

    #[test]
    fn empty_stream() {
        let mut m = empty(2, 2, CovarianceMode::Plastic);
        let before = m.clone();
        let r = ingest_stream(&mut m, Vec::<Result<LabeledBatch>>::new(), Semantics::Chunk).unwrap();
        assert_eq!(r.total_nanos, 0);
        assert_eq!(m, before);
    }

    #[test]
    fn semantics_round_trip() {
        for s in [Semantics::Exact, Semantics::Chunk] {
            assert_eq!(s.to_string().parse::<Semantics>().unwrap(), s);
        }
    }
}

//! Domain types shared by every module.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const SYMMETRY_TOL: f64 = 1e-9;

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    // Exponent-bit test, branch-free inside each chunk so the scan vectorizes.
    const EXP: u64 = 0x7ff0_0000_0000_0000;
    if values
        .chunks(64)
        .all(|c| c.iter().fold(0u64, |bad, v| bad | ((v.to_bits() & EXP) == EXP) as u64) == 0)
    {
        Ok(())
    } else {
        Err(Error::NonFiniteInput)
    }
}

/// A single feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDimension { dim: 0, classes: 0 });
        }
        check_finite(&values)?;
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `m` embeddings with their integer labels; the unit of streaming ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    embeddings: Array2<f64>,
    labels: Vec<u32>,
}

impl LabeledBatch {
    pub fn new(embeddings: Array2<f64>, labels: Vec<u32>) -> Result<Self> {
        if embeddings.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: embeddings.nrows(),
                got: labels.len(),
            });
        }
        Ok(LabeledBatch {
            embeddings: embeddings.as_standard_layout().into_owned(),
            labels,
        })
    }

    pub fn empty(dim: usize) -> Self {
        LabeledBatch {
            embeddings: Array2::zeros((0, dim)),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.view()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.embeddings.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    /// Check labels against the class count and dimension against `dim`, and
    /// reject non-finite embeddings.
    pub fn validate(&self, dim: usize, num_classes: usize) -> Result<()> {
        if self.dim() != dim && !self.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.dim(),
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as u64,
                num_classes,
            });
        }
        check_finite(self.embeddings.as_slice().expect("standard layout"))
    }

    /// Split into consecutive batches of at most `size` rows.
    pub fn chunks(&self, size: usize) -> Vec<LabeledBatch> {
        assert!(size > 0, "chunk size must be positive");
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.len() {
            let end = (start + size).min(self.len());
            out.push(LabeledBatch {
                embeddings: self
                    .embeddings
                    .slice(ndarray::s![start..end, ..])
                    .to_owned(),
                labels: self.labels[start..end].to_vec(),
            });
            start = end;
        }
        out
    }
}

/// Per-class running means and sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub(crate) means: Array2<f64>,
    pub(crate) counts: Vec<u64>,
}

impl ClassStats {
    /// Written element by element rather than zero-allocated, so every page
    /// is mapped here instead of on a class's first update.
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        ClassStats {
            means: Array2::from_shape_fn((num_classes, dim), |_| 0.0),
            counts: (0..num_classes).map(|_| 0).collect(),
        }
    }

    pub fn from_parts(means: Array2<f64>, counts: Vec<u64>) -> Result<Self> {
        if means.nrows() != counts.len() {
            return Err(Error::DimensionMismatch {
                expected: means.nrows(),
                got: counts.len(),
            });
        }
        let means = means.as_standard_layout().into_owned();
        for (row, &c) in means.rows().into_iter().zip(&counts) {
            if c == 0 && row.iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidSpec(
                    "zero-count class with a non-zero mean".into(),
                ));
            }
        }
        check_finite(means.as_slice().expect("standard layout"))?;
        Ok(ClassStats { means, counts })
    }

    pub fn means(&self) -> ArrayView2<'_, f64> {
        self.means.view()
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        let d = self.means.ncols();
        &self.means.as_slice().expect("standard layout")[class * d..(class + 1) * d]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn is_live(&self, class: usize) -> bool {
        self.counts[class] > 0
    }

    pub fn live_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, _)| k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    Plastic,
    Fixed,
}

impl fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovarianceMode::Plastic => "plastic",
            CovarianceMode::Fixed => "fixed",
        })
    }
}

impl FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plastic" => Ok(CovarianceMode::Plastic),
            "fixed" => Ok(CovarianceMode::Fixed),
            other => Err(Error::InvalidConfig(format!("unknown covariance mode {other:?}"))),
        }
    }
}

/// Shared covariance with its global step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedCovariance {
    pub(crate) sigma: Array2<f64>,
    pub(crate) step: u64,
    pub(crate) mode: CovarianceMode,
}

impl SharedCovariance {
    pub fn zeros(dim: usize, mode: CovarianceMode) -> Self {
        SharedCovariance {
            sigma: Array2::zeros((dim, dim)),
            step: 0,
            mode,
        }
    }

    pub fn new(sigma: Array2<f64>, step: u64, mode: CovarianceMode) -> Result<Self> {
        let d = sigma.nrows();
        if sigma.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigma.ncols(),
            });
        }
        let sigma = sigma.as_standard_layout().into_owned();
        check_finite(sigma.as_slice().expect("standard layout"))?;
        let scale = sigma.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..d {
            if sigma[[i, i]] < 0.0 {
                return Err(Error::InvalidSpec("negative covariance diagonal".into()));
            }
            for j in (i + 1)..d {
                if (sigma[[i, j]] - sigma[[j, i]]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidSpec("covariance is not symmetric".into()));
                }
            }
        }
        Ok(SharedCovariance { sigma, step, mode })
    }

    pub fn sigma(&self) -> ArrayView2<'_, f64> {
        self.sigma.view()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }
}

/// Fully-connected layer parameters: `logits = W x + b`.
///
/// A bias of `-inf` marks a class excluded from prediction (it has no data).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl LinearHead {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.nrows(),
                got: bias.len(),
            });
        }
        let weights = weights.as_standard_layout().into_owned();
        check_finite(weights.as_slice().expect("standard layout"))?;
        if bias.iter().any(|b| b.is_nan() || *b == f64::INFINITY) {
            return Err(Error::NonFiniteInput);
        }
        Ok(LinearHead { weights, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn bias(&self) -> ArrayView1<'_, f64> {
        self.bias.view()
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        let d = self.dim();
        &self.weights.as_slice().expect("standard layout")[class * d..(class + 1) * d]
    }

    pub fn is_excluded(&self, class: usize) -> bool {
        self.bias[class] == f64::NEG_INFINITY
    }

    /// Logit of one class, computed the same way on every inference path.
    #[inline]
    pub fn logit(&self, class: usize, x: &[f64]) -> f64 {
        linalg::dot(self.weight_row(class), x) + self.bias[class]
    }

    /// Fraction of rows whose argmax logit equals the label.
    pub fn accuracy(&self, x: ArrayView2<'_, f64>, labels: &[u32]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let mut correct = 0usize;
        for (row, &y) in x.rows().into_iter().zip(labels) {
            let row = row.to_vec();
            let (best, _) = argmax((0..self.num_classes()).map(|k| self.logit(k, &row)));
            if best == y as usize {
                correct += 1;
            }
        }
        correct as f64 / labels.len() as f64
    }
}

/// Index and value of the largest element; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut first = true;
    for (i, v) in values.into_iter().enumerate() {
        if first || v > best.1 {
            best = (i, v);
            first = false;
        }
    }
    best
}

/// `Λ = ((1-β)Σ + βI)⁻¹`, realized through an SPD solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkagePrecision {
    lambda: Array2<f64>,
    beta: f64,
}

impl ShrinkagePrecision {
    pub fn compute(sigma: ArrayView2<'_, f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidConfig(format!("beta must lie in (0, 1), got {beta}")));
        }
        let d = sigma.nrows();
        let mixed = shrink(sigma, beta);
        let mut lambda = linalg::spd_solve(mixed.view(), Array2::<f64>::eye(d).view())?;
        linalg::symmetrize(&mut lambda);
        Ok(ShrinkagePrecision { lambda, beta })
    }

    pub fn lambda(&self) -> ArrayView2<'_, f64> {
        self.lambda.view()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// `(1-β)Σ + βI`
pub fn shrink(sigma: ArrayView2<'_, f64>, beta: f64) -> Array2<f64> {
    let d = sigma.nrows();
    let mut mixed = sigma.to_owned() * (1.0 - beta);
    for i in 0..d {
        mixed[[i, i]] += beta;
    }
    mixed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    TrainBoth,
    TrainMuOnly,
    TrainSigmaOnly,
    Frozen,
}

impl TrainMode {
    pub fn trains_mu(self) -> bool {
        matches!(self, TrainMode::TrainBoth | TrainMode::TrainMuOnly)
    }

    pub fn trains_sigma(self) -> bool {
        matches!(self, TrainMode::TrainBoth | TrainMode::TrainSigmaOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::TrainBoth => "train_both",
            TrainMode::TrainMuOnly => "train_mu_only",
            TrainMode::TrainSigmaOnly => "train_sigma_only",
            TrainMode::Frozen => "frozen",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            TrainMode::TrainBoth => 0,
            TrainMode::TrainMuOnly => 1,
            TrainMode::TrainSigmaOnly => 2,
            TrainMode::Frozen => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => TrainMode::TrainBoth,
            1 => TrainMode::TrainMuOnly,
            2 => TrainMode::TrainSigmaOnly,
            3 => TrainMode::Frozen,
            _ => return None,
        })
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The streaming LDA classifier: class statistics plus a shared covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub(crate) stats: ClassStats,
    pub(crate) covariance: SharedCovariance,
    pub(crate) train_mode: TrainMode,
    /// Bumped on every mutation; used to detect stale translations and indexes.
    pub(crate) revision: u64,
}

impl LdaModel {
    pub fn from_parts(
        stats: ClassStats,
        covariance: SharedCovariance,
        train_mode: TrainMode,
    ) -> Result<Self> {
        let (n, d) = stats.means.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidDimension { dim: d, classes: n });
        }
        if covariance.sigma.nrows() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance.sigma.nrows(),
            });
        }
        Ok(LdaModel {
            stats,
            covariance,
            train_mode,
            revision: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.stats.means.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.stats.means.nrows()
    }

    pub fn stats(&self) -> &ClassStats {
        &self.stats
    }

    pub fn covariance(&self) -> &SharedCovariance {
        &self.covariance
    }

    pub fn train_mode(&self) -> TrainMode {
        self.train_mode
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn set_train_mode(&mut self, mode: TrainMode) {
        self.train_mode = mode;
    }

    pub fn set_covariance_mode(&mut self, mode: CovarianceMode) {
        self.covariance.mode = mode;
    }

    pub fn live_count(&self) -> usize {
        self.stats.live_classes().count()
    }

    pub(crate) fn check_sample(&self, z: &[f64], label: usize) -> Result<()> {
        if label >= self.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: label as u64,
                num_classes: self.num_classes(),
            });
        }
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        check_finite(z)
    }
}

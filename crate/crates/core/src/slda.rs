//! Per-sample streaming LDA training and exact inference through translation
//! to an equivalent linear head.

use ndarray::{Array1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    argmax, check_finite, ClassStats, CovarianceMode, LdaModel, LinearHead, SharedCovariance,
    ShrinkagePrecision, TrainMode,
};

/// Conventional SLDA shrinkage.
pub const DEFAULT_BETA: f64 = 1e-4;

impl LdaModel {
    /// All means, counts and covariance zero; step zero.
    pub fn init_empty(
        dim: usize,
        num_classes: usize,
        mode: CovarianceMode,
        train_mode: TrainMode,
    ) -> Result<Self> {
        if dim == 0 || num_classes == 0 {
            return Err(Error::InvalidDimension {
                dim,
                classes: num_classes,
            });
        }
        LdaModel::from_parts(
            ClassStats::zeros(num_classes, dim),
            SharedCovariance::zeros(dim, mode),
            train_mode,
        )
    }

    /// Fold one labelled sample into the model.
    ///
    /// The covariance step runs first so that its residual uses the class
    /// mean from before this sample.
    pub fn update_sample(&mut self, z: &[f64], label: usize) -> Result<()> {
        if self.train_mode == TrainMode::Frozen {
            return Err(Error::ModelFrozen(self.train_mode.name()));
        }
        self.check_sample(z, label)?;
        self.apply_sample(z, label);
        Ok(())
    }

    /// `update_sample` without validation. Callers have checked label range,
    /// dimension and finiteness.
    pub(crate) fn apply_sample(&mut self, z: &[f64], label: usize) {
        if self.train_mode.trains_sigma() && self.covariance.mode == CovarianceMode::Plastic {
            let residual: Vec<f64> = z
                .iter()
                .zip(self.stats.mean(label))
                .map(|(a, b)| a - b)
                .collect();
            rank_one_step(&mut self.covariance, &residual);
        }
        if self.train_mode.trains_mu() {
            let d = self.dim();
            let c = self.stats.counts[label] as f64;
            let row = &mut self.stats.means.as_slice_mut().expect("standard layout")
                [label * d..(label + 1) * d];
            for (m, &v) in row.iter_mut().zip(z) {
                *m = (c * *m + v) / (c + 1.0);
            }
            self.stats.counts[label] += 1;
        }
        self.revision += 1;
    }

    /// Translate to a linear head with shrinkage `beta`.
    pub fn translate(&self, beta: f64) -> Result<TranslatedModel> {
        let precision = ShrinkagePrecision::compute(self.covariance.sigma(), beta)?;
        let means = self.stats.means();
        // Λ is symmetric, so the rows of μΛ are Λμ_k.
        let weights = means.dot(&precision.lambda());
        let n = self.num_classes();
        let mut bias = Array1::<f64>::zeros(n);
        for k in 0..n {
            bias[k] = if self.stats.is_live(k) {
                -0.5 * linalg::dot(self.stats.mean(k), weights.row(k).as_slice().unwrap())
            } else {
                f64::NEG_INFINITY
            };
        }
        Ok(TranslatedModel {
            head: LinearHead::new(weights, bias)?,
            source_step: self.covariance.step,
            source_revision: self.revision,
            beta,
        })
    }
}

/// One covariance recurrence step:
/// `Δ = t r rᵀ/(t+1)`, `Σ ← (tΣ + Δ)/(t+1)`, `t ← t+1`.
pub(crate) fn rank_one_step(cov: &mut SharedCovariance, residual: &[f64]) {
    let t = cov.step as f64;
    let w = t / (t + 1.0);
    let inv = 1.0 / (t + 1.0);
    let d = residual.len();
    let sigma = cov.sigma.as_slice_mut().expect("standard layout");
    for i in 0..d {
        let wi = w * residual[i];
        for j in i..d {
            let v = (t * sigma[i * d + j] + wi * residual[j]) * inv;
            sigma[i * d + j] = v;
            sigma[j * d + i] = v;
        }
    }
    cov.step += 1;
}

/// An LDA model translated to `W = Λμ`, `b = -½ μ·Λμ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatedModel {
    pub head: LinearHead,
    pub source_step: u64,
    pub(crate) source_revision: u64,
    pub beta: f64,
}

/// Full logit vector and its argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub class: usize,
}

impl TranslatedModel {
    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.head.dim()
    }

    pub fn source_revision(&self) -> u64 {
        self.source_revision
    }

    /// True when `model` changed after this translation was made.
    pub fn is_stale(&self, model: &LdaModel) -> bool {
        self.source_step != model.covariance.step || self.source_revision != model.revision
    }

    /// `logits = W x + b`; excluded classes stay at `-inf`.
    pub fn predict_exact(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        check_finite(x)?;
        let logits: Vec<f64> = (0..self.num_classes())
            .map(|k| self.head.logit(k, x))
            .collect();
        let (class, _) = argmax(logits.iter().copied());
        Ok(Prediction { logits, class })
    }

    /// Argmax class of every row, via one matrix product.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let logits = x.dot(&self.head.weights().t()) + self.head.bias();
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()).0)
            .collect())
    }

    pub fn accuracy(&self, x: ArrayView2<'_, f64>, labels: &[u32]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let predicted = self.predict_batch(x)?;
        let correct = predicted
            .iter()
            .zip(labels)
            .filter(|(p, &y)| **p == y as usize)
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }
}

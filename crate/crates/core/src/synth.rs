//! Gaussian class-conditional data with a known optimal classifier.
//!
//! Class means are drawn once per seed; samples are `x = μ_y + L ε` with
//! `L Lᵀ = Σ`. The Bayes accuracy is estimated by running the true-parameter
//! LDA rule over a separate held-out draw.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{narrow, write_embeddings, EmbeddingData};
use crate::linalg;
use crate::model::argmax;

/// Within-class covariance descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSpec {
    Identity,
    /// `Q diag(λ) Qᵀ` with random orthogonal `Q` and `λ` log-uniform on
    /// `[min_eig, max_eig]`.
    RandomSpd { min_eig: f64, max_eig: f64 },
}

impl fmt::Display for CovarianceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovarianceSpec::Identity => f.write_str("identity"),
            CovarianceSpec::RandomSpd { min_eig, max_eig } => {
                write!(f, "random_spd:{min_eig}:{max_eig}")
            }
        }
    }
}

impl FromStr for CovarianceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "identity" {
            return Ok(CovarianceSpec::Identity);
        }
        let bad = || Error::InvalidSpec(format!("unknown covariance descriptor {s:?}"));
        let rest = s.strip_prefix("random_spd").ok_or_else(bad)?;
        if rest.is_empty() {
            return Ok(CovarianceSpec::RandomSpd {
                min_eig: 0.02,
                max_eig: 1.0,
            });
        }
        let mut parts = rest.strip_prefix(':').ok_or_else(bad)?.split(':');
        let mut next = || -> Result<f64> {
            parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(bad)
        };
        let (min_eig, max_eig) = (next()?, next()?);
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(CovarianceSpec::RandomSpd { min_eig, max_eig })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation `s` of the class means.
    pub mean_scale: f64,
    pub covariance: CovarianceSpec,
    /// Draw means from `N(0, s²Σ)` instead of `N(0, s²I)`.
    pub correlated_means: bool,
    /// Held-out samples used for the Bayes estimate.
    pub bayes_samples: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn identity(num_classes: usize, dim: usize, mean_scale: f64, seed: u64) -> Self {
        SyntheticSpec {
            num_classes,
            dim,
            train_per_class: 20,
            test_per_class: 10,
            mean_scale,
            covariance: CovarianceSpec::Identity,
            correlated_means: false,
            bayes_samples: 20_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if self.num_classes == 0 || self.num_classes > u32::MAX as usize {
            return fail(format!("num_classes out of range: {}", self.num_classes));
        }
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return fail(format!("dim out of range: {}", self.dim));
        }
        if self.train_per_class == 0 {
            return fail("train_per_class must be positive".into());
        }
        if self.bayes_samples == 0 {
            return fail("bayes_samples must be positive".into());
        }
        if !(self.mean_scale >= 0.0 && self.mean_scale.is_finite()) {
            return fail(format!("mean_scale must be finite and >= 0, got {}", self.mean_scale));
        }
        if let CovarianceSpec::RandomSpd { min_eig, max_eig } = self.covariance {
            if !(min_eig > 0.0 && max_eig >= min_eig && max_eig.is_finite()) {
                return fail(format!("bad eigenvalue range [{min_eig}, {max_eig}]"));
            }
        }
        Ok(())
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("num_classes", self.num_classes.to_string()),
            ("dim", self.dim.to_string()),
            ("train_per_class", self.train_per_class.to_string()),
            ("test_per_class", self.test_per_class.to_string()),
            ("mean_scale", self.mean_scale.to_string()),
            ("covariance", self.covariance.to_string()),
            ("correlated_means", self.correlated_means.to_string()),
            ("bayes_samples", self.bayes_samples.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// True generative parameters.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    pub means: Array2<f64>,
    pub sigma: Array2<f64>,
    /// `L` with `L Lᵀ = Σ`; `None` for identity.
    sqrt_sigma: Option<Array2<f64>>,
}

impl GaussianModel {
    /// Draw class means and covariance for `spec`.
    pub fn draw(spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let (n, d) = (spec.num_classes, spec.dim);
        let (sigma, sqrt_sigma) = match spec.covariance {
            CovarianceSpec::Identity => (Array2::eye(d), None),
            CovarianceSpec::RandomSpd { min_eig, max_eig } => {
                let q = random_orthogonal(d, rng);
                let (lo, hi) = (min_eig.ln(), max_eig.ln());
                let eig: Array1<f64> = (0..d).map(|_| rng.random_range(lo..=hi).exp()).collect();
                let sqrt = &q * &eig.mapv(f64::sqrt);
                let mut sigma = (&q * &eig).dot(&q.t());
                linalg::symmetrize(&mut sigma);
                (sigma, Some(sqrt))
            }
        };
        let raw = gaussian_matrix(n, d, rng) * spec.mean_scale;
        let means = match (&sqrt_sigma, spec.correlated_means) {
            (Some(l), true) => raw.dot(&l.t()),
            _ => raw,
        };
        Ok(GaussianModel {
            means,
            sigma,
            sqrt_sigma,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// One sample per label, row-aligned.
    pub fn sample(&self, labels: &[u32], rng: &mut impl Rng) -> Array2<f64> {
        let noise = gaussian_matrix(labels.len(), self.dim(), rng);
        let noise = match &self.sqrt_sigma {
            Some(l) => noise.dot(&l.t()),
            None => noise,
        };
        let rows: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
        self.means.select(Axis(0), &rows) + noise
    }

    /// Accuracy of the equal-prior LDA rule with the true `μ`, `Σ`.
    pub fn bayes_accuracy(&self, x: &Array2<f64>, labels: &[u32]) -> Result<f64> {
        let weights = match self.sqrt_sigma {
            None => self.means.clone(),
            Some(_) => linalg::spd_solve(self.sigma.view(), self.means.t())?.t().to_owned(),
        };
        let bias: Array1<f64> = weights
            .rows()
            .into_iter()
            .zip(self.means.rows())
            .map(|(w, m)| -0.5 * w.dot(&m))
            .collect();
        let mut correct = 0usize;
        for (chunk, ys) in x
            .axis_chunks_iter(Axis(0), 1024)
            .zip(labels.chunks(1024))
        {
            let logits = chunk.dot(&weights.t()) + &bias;
            for (row, &y) in logits.rows().into_iter().zip(ys) {
                if argmax(row.iter().copied()).0 == y as usize {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / labels.len().max(1) as f64)
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Columns form an orthonormal basis (Gram-Schmidt on a Gaussian matrix).
fn random_orthogonal(d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let p = linalg::dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = linalg::dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    Array2::from_shape_fn((d, d), |(i, j)| basis[j][i])
}

/// Balanced labels, `per_class` of each, shuffled.
pub fn balanced_labels(num_classes: usize, per_class: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut labels: Vec<u32> = (0..num_classes as u32)
        .flat_map(|k| std::iter::repeat_n(k, per_class))
        .collect();
    labels.shuffle(rng);
    labels
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub model: GaussianModel,
    pub train: EmbeddingData,
    pub test: EmbeddingData,
    pub bayes_accuracy: f64,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let model = GaussianModel::draw(spec, &mut rng)?;
    let n = spec.num_classes;
    let split = |per_class: usize, rng: &mut ChaCha8Rng| -> Result<EmbeddingData> {
        let labels = balanced_labels(n, per_class, rng);
        let x = model.sample(&labels, rng);
        EmbeddingData::new(narrow(x.view()), labels, n as u32)
    };
    let train = split(spec.train_per_class, &mut rng)?;
    let test = split(spec.test_per_class, &mut rng)?;

    let labels: Vec<u32> = (0..spec.bayes_samples)
        .map(|_| rng.random_range(0..n as u32))
        .collect();
    let held_out = model.sample(&labels, &mut rng);
    let bayes_accuracy = model.bayes_accuracy(&held_out, &labels)?;

    Ok(SyntheticData {
        spec: spec.clone(),
        model,
        train,
        test,
        bayes_accuracy,
    })
}

/// Paths written for a dataset prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub manifest: PathBuf,
}

impl SyntheticPaths {
    pub fn for_prefix(prefix: impl AsRef<Path>) -> Self {
        let p = prefix.as_ref().to_string_lossy().into_owned();
        SyntheticPaths {
            train: PathBuf::from(format!("{p}.train.xemb")),
            test: PathBuf::from(format!("{p}.test.xemb")),
            manifest: PathBuf::from(format!("{p}.manifest.txt")),
        }
    }
}

pub fn write_synthetic(prefix: impl AsRef<Path>, data: &SyntheticData) -> Result<SyntheticPaths> {
    let paths = SyntheticPaths::for_prefix(prefix);
    write_embeddings(&paths.train, &data.train)?;
    write_embeddings(&paths.test, &data.test)?;
    let mut text = String::new();
    for (k, v) in data.spec.to_pairs() {
        text.push_str(&format!("{k}={v}\n"));
    }
    text.push_str(&format!("bayes_accuracy={}\n", data.bayes_accuracy));
    fs::write(&paths.manifest, text)?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub spec: SyntheticSpec,
    pub bayes_accuracy: f64,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    parse_manifest(&fs::read_to_string(path)?)
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut fields = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidSpec(format!("malformed manifest line {line:?}")))?;
        fields.insert(k.trim(), v.trim());
    }
    fn get<T: FromStr>(fields: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
        fields
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidSpec(format!("manifest field {key} missing or invalid")))
    }
    let spec = SyntheticSpec {
        num_classes: get(&fields, "num_classes")?,
        dim: get(&fields, "dim")?,
        train_per_class: get(&fields, "train_per_class")?,
        test_per_class: get(&fields, "test_per_class")?,
        mean_scale: get(&fields, "mean_scale")?,
        covariance: fields
            .get("covariance")
            .ok_or_else(|| Error::InvalidSpec("manifest field covariance missing".into()))?
            .parse()?,
        correlated_means: get(&fields, "correlated_means")?,
        bayes_samples: get(&fields, "bayes_samples")?,
        seed: get(&fields, "seed")?,
    };
    Ok(Manifest {
        spec,
        bayes_accuracy: get(&fields, "bayes_accuracy")?,
    })
}

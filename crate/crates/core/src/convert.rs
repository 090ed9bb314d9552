//! Conversion between a fully-connected head and an LDA model, and the binary
//! Gaussian posterior identity that links the two.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    ClassStats, CovarianceMode, LdaModel, LinearHead, SharedCovariance, TrainMode,
};

/// Covariance initialization used when seeding an LDA model from `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// `Σ = I`
    Identity,
    /// `Σ = Cov(W)`, each class weight vector one observation.
    CovOfWeights,
}

impl fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaMode::Identity => "identity",
            SigmaMode::CovOfWeights => "cov",
        })
    }
}

impl FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(SigmaMode::Identity),
            "cov" | "cov_of_weights" => Ok(SigmaMode::CovOfWeights),
            other => Err(Error::InvalidConfig(format!("unknown sigma mode {other:?}"))),
        }
    }
}

/// Seed an LDA model from a trained FC head: `μ = W`, one pseudo-count per
/// class, `Σ = I` or `Cov(W)`, step `n`. The FC bias is dropped; rows whose
/// bias is `-inf` become dead classes.
pub fn fc_to_lda(head: &LinearHead, sigma_mode: SigmaMode) -> Result<LdaModel> {
    let (n, d) = (head.num_classes(), head.dim());
    let live: Vec<bool> = (0..n).map(|k| !head.is_excluded(k)).collect();
    let mut means = head.weights().to_owned();
    for (k, &alive) in live.iter().enumerate() {
        if !alive {
            means.row_mut(k).fill(0.0);
        }
    }
    let counts: Vec<u64> = live.iter().map(|&a| a as u64).collect();
    let sigma = match sigma_mode {
        SigmaMode::Identity => Array2::<f64>::eye(d),
        SigmaMode::CovOfWeights => {
            let rows: Vec<usize> = (0..n).filter(|&k| live[k]).collect();
            if rows.len() < 2 {
                return Err(Error::TooFewClasses(rows.len()));
            }
            weight_covariance(&means.select(Axis(0), &rows))
        }
    };
    LdaModel::from_parts(
        ClassStats::from_parts(means, counts)?,
        SharedCovariance::new(sigma, n as u64, CovarianceMode::Plastic)?,
        TrainMode::TrainBoth,
    )
}

/// Sample covariance of the rows of `w` with divisor `n - 1`.
fn weight_covariance(w: &Array2<f64>) -> Array2<f64> {
    let n = w.nrows() as f64;
    let centered = w - &w.mean_axis(Axis(0)).expect("non-empty");
    let mut cov = centered.t().dot(&centered) / (n - 1.0);
    linalg::symmetrize(&mut cov);
    cov
}

/// LDA → FC under the conversion vocabulary: `W = Λμ`, `b = -½ μ·Λμ`.
pub fn lda_to_fc(model: &LdaModel, beta: f64) -> Result<LinearHead> {
    Ok(model.translate(beta)?.head)
}

/// Univariate two-class LDA with shared variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryLdaSpec {
    pub mu0: f64,
    pub mu1: f64,
    pub sigma: f64,
    /// Prior probability of class 1.
    pub phi: f64,
}

impl BinaryLdaSpec {
    pub fn new(mu0: f64, mu1: f64, sigma: f64, phi: f64) -> Result<Self> {
        let spec = BinaryLdaSpec { mu0, mu1, sigma, phi };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu0.is_finite() && self.mu1.is_finite()) {
            return Err(Error::InvalidSpec("class means must be finite".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(Error::InvalidSpec(format!("phi must lie in (0, 1), got {}", self.phi)));
        }
        Ok(())
    }
}

/// Both evaluations of `p(y=1 | x)` and the logistic parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorEval {
    /// Bayes' rule with Gaussian likelihoods.
    pub bayes: f64,
    /// `1 / (1 + α exp(-(w x + b)))`
    pub logistic: f64,
    pub w: f64,
    pub b: f64,
    /// Prior odds of class 0 against class 1, `(1-φ)/φ`.
    pub alpha: f64,
}

pub fn binary_posterior(spec: &BinaryLdaSpec, x: f64) -> Result<PosteriorEval> {
    spec.validate()?;
    if !x.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let BinaryLdaSpec { mu0, mu1, sigma, phi } = *spec;
    let var = sigma * sigma;

    // Joint log densities log p(x|y) + log p(y); normalizing by the larger
    // keeps the ratio representable far out in the tails.
    let log_norm = -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let joint0 = log_norm - 0.5 * ((x - mu0) / sigma).powi(2) + (1.0 - phi).ln();
    let joint1 = log_norm - 0.5 * ((x - mu1) / sigma).powi(2) + phi.ln();
    let top = joint0.max(joint1);
    let (p0, p1) = ((joint0 - top).exp(), (joint1 - top).exp());
    let bayes = p1 / (p0 + p1);

    let w = (mu1 - mu0) / var;
    let b = (mu0 * mu0 - mu1 * mu1) / (2.0 * var);
    let alpha = (1.0 - phi) / phi;
    let logistic = 1.0 / (1.0 + alpha * (-(w * x + b)).exp());

    Ok(PosteriorEval {
        bayes,
        logistic,
        w,
        b,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn identity_conversion() {
        let head = LinearHead::new(Array2::eye(2), Array1::zeros(2)).unwrap();
        let m = fc_to_lda(&head, SigmaMode::Identity).unwrap();
        assert_eq!(m.stats().means(), Array2::<f64>::eye(2));
        assert_eq!(m.stats().counts(), &[1, 1]);
        assert_eq!(m.covariance().sigma(), Array2::<f64>::eye(2));
        assert_eq!(m.covariance().step(), 2);
    }

    #[test]
    fn cov_of_two_unit_vectors() {
        let head = LinearHead::new(array![[1.0, 0.0], [0.0, 1.0]], Array1::zeros(2)).unwrap();
        let m = fc_to_lda(&head, SigmaMode::CovOfWeights).unwrap();
        assert_eq!(m.covariance().sigma(), array![[0.5, -0.5], [-0.5, 0.5]]);
    }

    #[test]
    fn cov_needs_two_classes() {
        let head = LinearHead::new(array![[1.0, 2.0]], Array1::zeros(1)).unwrap();
        assert!(matches!(
            fc_to_lda(&head, SigmaMode::CovOfWeights),
            Err(Error::TooFewClasses(1))
        ));
    }

    #[test]
    fn identity_round_trip_is_exact() {
        let w = array![[0.3, -1.25, 2.0], [4.0, 0.0, -0.5], [1.0, 1.0, 1.0]];
        let head = LinearHead::new(w.clone(), array![9.0, -3.0, 0.1]).unwrap();
        let m = fc_to_lda(&head, SigmaMode::Identity).unwrap();
        let back = lda_to_fc(&m, 1e-4).unwrap();
        assert_eq!(back.weights(), w);
    }

    #[test]
    fn lda_to_fc_identity_bias() {
        let head = LinearHead::new(array![[3.0, 4.0]], array![0.0]).unwrap();
        let m = fc_to_lda(&head, SigmaMode::Identity).unwrap();
        let fc = lda_to_fc(&m, 1e-4).unwrap();
        assert_eq!(fc.weight_row(0), &[3.0, 4.0]);
        assert_eq!(fc.bias()[0], -12.5);
    }

    #[test]
    fn excluded_rows_stay_excluded() {
        let head = LinearHead::new(
            array![[1.0, 0.0], [7.0, 7.0], [0.0, 1.0]],
            array![0.0, f64::NEG_INFINITY, 0.0],
        )
        .unwrap();
        let m = fc_to_lda(&head, SigmaMode::CovOfWeights).unwrap();
        assert_eq!(m.stats().counts(), &[1, 0, 1]);
        let fc = lda_to_fc(&m, 1e-4).unwrap();
        assert!(fc.is_excluded(1));
        assert!(!fc.is_excluded(0));
    }

    #[test]
    fn symmetric_posterior() {
        let spec = BinaryLdaSpec::new(-1.0, 1.0, 1.0, 0.5).unwrap();
        let p = binary_posterior(&spec, 0.0).unwrap();
        assert_eq!(p.bayes, 0.5);
        assert_eq!(p.logistic, 0.5);
        let p = binary_posterior(&spec, 1.0).unwrap();
        assert_eq!((p.w, p.b, p.alpha), (2.0, 0.0, 1.0));
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((p.bayes - expected).abs() < 1e-15);
        assert!((p.bayes - 0.880797).abs() < 1e-6);
    }

    #[test]
    fn invalid_specs() {
        assert!(BinaryLdaSpec::new(0.0, 1.0, 0.0, 0.5).is_err());
        assert!(BinaryLdaSpec::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(BinaryLdaSpec::new(f64::NAN, 1.0, 1.0, 0.3).is_err());
    }
}

//! Accuracy against the Bayes-optimal oracle, and chunk-update deviation.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use xlda_core::synth::GaussianModel;
use xlda_core::{
    fc_to_lda, generate_synthetic, CovarianceMode, CovarianceSpec, LabeledBatch, LdaModel, LinearHead, Semantics,
    SigmaMode, SyntheticSpec, TrainMode, DEFAULT_BETA,
};

/// Standard normal CDF by composite Simpson integration of the density.
fn normal_cdf(z: f64) -> f64 {
    let steps = 20_000;
    let (a, b) = (0.0, z.abs());
    let h = (b - a) / steps as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut sum = pdf(a) + pdf(b);
    for i in 1..steps {
        sum += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let half = sum * h / 3.0;
    if z >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

#[test]
fn two_class_conversion_reaches_analytic_bayes() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let d = 8;
    let w = Array2::from_shape_simple_fn((2, d), || rng.sample::<f64, _>(StandardNormal) * 0.6);
    let gap = (&w.row(0) - &w.row(1)).mapv(|v| v * v).sum().sqrt();
    let bayes = normal_cdf(gap / 2.0);

    let head = LinearHead::new(w.clone(), Array1::zeros(2)).unwrap();
    let model = fc_to_lda(&head, SigmaMode::Identity).unwrap();
    let translated = model.translate(DEFAULT_BETA).unwrap();
    let samples = 40_000;
    let labels: Vec<u32> = (0..samples).map(|i| (i % 2) as u32).collect();
    let x = Array2::from_shape_fn((samples, d), |(i, j)| {
        w[[labels[i] as usize, j]] + rng.sample::<f64, _>(StandardNormal)
    });
    let acc = translated.accuracy(x.view(), &labels).unwrap();
    assert!((acc - bayes).abs() <= 0.02, "accuracy {acc} vs Bayes {bayes}");
}

#[test]
fn bayes_estimate_limits() {
    let chance = generate_synthetic(&SyntheticSpec {
        bayes_samples: 50_000,
        ..SyntheticSpec::identity(10, 4, 0.0, 3)
    })
    .unwrap();
    assert!((chance.bayes_accuracy - 0.1).abs() < 0.01, "{}", chance.bayes_accuracy);

    let separable = generate_synthetic(&SyntheticSpec::identity(10, 4, 1000.0, 3)).unwrap();
    assert!(separable.bayes_accuracy > 0.999, "{}", separable.bayes_accuracy);
}

#[test]
fn bayes_estimate_matches_two_class_formula() {
    let spec = SyntheticSpec {
        bayes_samples: 200_000,
        ..SyntheticSpec::identity(2, 3, 1.0, 8)
    };
    let data = generate_synthetic(&spec).unwrap();
    let gap = (&data.model.means.row(0) - &data.model.means.row(1)).mapv(|v| v * v).sum().sqrt();
    let expected = normal_cdf(gap / 2.0);
    assert!((data.bayes_accuracy - expected).abs() < 0.005);
}

#[test]
fn streaming_lda_approaches_bayes() {
    let spec = SyntheticSpec {
        train_per_class: 200,
        test_per_class: 100,
        ..SyntheticSpec::identity(100, 32, 3.0, 21)
    };
    let data = generate_synthetic(&spec).unwrap();
    let mut model = LdaModel::init_empty(32, 100, CovarianceMode::Plastic, TrainMode::TrainBoth).unwrap();
    for batch in data.train.batches(512) {
        model.ingest_batch(&batch.unwrap(), Semantics::Chunk).unwrap();
    }
    let test = data.test.widened();
    let acc = model.translate(DEFAULT_BETA).unwrap().accuracy(test.view(), &data.test.labels).unwrap();
    assert!(
        (acc - data.bayes_accuracy).abs() <= 0.02,
        "accuracy {acc} vs Bayes {}",
        data.bayes_accuracy
    );
}

#[test]
fn learned_covariance_matters_on_correlated_data() {
    let spec = SyntheticSpec {
        train_per_class: 100,
        test_per_class: 50,
        covariance: CovarianceSpec::RandomSpd { min_eig: 0.02, max_eig: 1.0 },
        correlated_means: true,
        ..SyntheticSpec::identity(20, 8, 1.0, 4)
    };
    let data = generate_synthetic(&spec).unwrap();
    let train = data.train.to_batch();
    let test = data.test.widened();
    let accuracy = |mode| {
        let mut m = LdaModel::init_empty(8, 20, mode, TrainMode::TrainBoth).unwrap();
        if mode == CovarianceMode::Fixed {
            m = LdaModel::from_parts(
                m.stats().clone(),
                xlda_core::SharedCovariance::new(Array2::eye(8), 0, mode).unwrap(),
                TrainMode::TrainBoth,
            )
            .unwrap();
        }
        m.ingest_batch(&train, Semantics::Chunk).unwrap();
        m.translate(DEFAULT_BETA).unwrap().accuracy(test.view(), &data.test.labels).unwrap()
    };
    let (plastic, fixed) = (accuracy(CovarianceMode::Plastic), accuracy(CovarianceMode::Fixed));
    assert!(plastic > fixed, "plastic {plastic} fixed {fixed}");
    assert!((plastic - data.bayes_accuracy).abs() < 0.05);
}

fn chunk_deviation(batch_size: usize, samples: &GaussianSamples) -> f64 {
    let (n, d) = (samples.n, samples.d);
    let mut exact = LdaModel::init_empty(d, n, CovarianceMode::Plastic, TrainMode::TrainBoth).unwrap();
    let mut chunk = exact.clone();
    for b in samples.batch.chunks(batch_size) {
        exact.ingest_batch(&b, Semantics::Exact).unwrap();
        chunk.ingest_batch(&b, Semantics::Chunk).unwrap();
    }
    let e = exact.covariance().sigma();
    let diff = (&chunk.covariance().sigma() - &e).mapv(|v| v * v).sum().sqrt();
    diff / e.mapv(|v| v * v).sum().sqrt()
}

struct GaussianSamples {
    n: usize,
    d: usize,
    batch: LabeledBatch,
}

#[test]
fn chunk_deviation_shrinks_with_batch_size() {
    let spec = SyntheticSpec {
        train_per_class: 410,
        ..SyntheticSpec::identity(10, 8, 0.5, 6)
    };
    let data = generate_synthetic(&spec).unwrap();
    let samples = GaussianSamples {
        n: 10,
        d: 8,
        batch: data.train.to_batch(),
    };
    let devs: Vec<f64> = [256, 64, 16].iter().map(|&b| chunk_deviation(b, &samples)).collect();
    assert!(devs.windows(2).all(|w| w[1] < w[0]), "{devs:?}");
    assert!(devs[0] < 0.05, "{devs:?}");
}

#[test]
fn true_parameter_sampling_is_unbiased() {
    let spec = SyntheticSpec {
        covariance: CovarianceSpec::RandomSpd { min_eig: 0.1, max_eig: 1.0 },
        ..SyntheticSpec::identity(1, 3, 1.0, 12)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = GaussianModel::draw(&spec, &mut rng).unwrap();
    let labels = vec![0u32; 100_000];
    let x = model.sample(&labels, &mut rng);
    let centered = &x - &model.means.row(0);
    let cov = centered.t().dot(&centered) / labels.len() as f64;
    let err = (&cov - &model.sigma).mapv(f64::abs).sum();
    assert!(err < 0.05, "{err}");
}

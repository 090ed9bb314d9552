//! Training- and inference-time benchmarks on synthetic Gaussian data.

use std::time::Instant;

use anyhow::Result;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use xlda_core::io::narrow;
use xlda_core::synth::GaussianModel;
use xlda_core::{
    bench_inference, build_index, fc_to_lda, ingest_per_sample, ingest_stream, train_fc, AnnConfig, Convergence,
    CovarianceMode, EmbeddingData, FcConfig, InferenceBench, LabeledBatch, LdaModel, LinearHead, Semantics,
    SigmaMode, SyntheticSpec, TrainMode, DEFAULT_BETA,
};

use crate::report::{BenchReport, DatasetInfo, InferReport, Speedups, TrainAccuracy, TrainTimes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBenchConfig {
    pub classes: usize,
    pub dim: usize,
    /// Training samples, independent of the class count.
    pub samples: usize,
    pub test_samples: usize,
    pub batch_size: usize,
    pub mean_scale: f64,
    pub fc_learning_rate: f32,
    /// Also train the FC head to convergence.
    pub converge: bool,
    pub seed: u64,
}

impl TrainBenchConfig {
    pub fn new(classes: usize, dim: usize) -> Self {
        TrainBenchConfig {
            classes,
            dim,
            samples: 8192,
            test_samples: 2048,
            batch_size: 512,
            mean_scale: 1.0,
            fc_learning_rate: 1.0,
            converge: false,
            seed: 0,
        }
    }
}

/// Draw `samples` points with uniformly random labels.
pub fn gaussian_split(model: &GaussianModel, samples: usize, rng: &mut ChaCha8Rng) -> Result<EmbeddingData> {
    let n = model.num_classes() as u32;
    let labels: Vec<u32> = (0..samples).map(|_| rng.random_range(0..n)).collect();
    let x = model.sample(&labels, rng);
    Ok(EmbeddingData::new(narrow(x.view()), labels, n)?)
}

fn lda_accuracy(model: &LdaModel, test: &EmbeddingData, x: &Array2<f64>) -> Result<f64> {
    Ok(model.translate(DEFAULT_BETA)?.accuracy(x.view(), &test.labels)?)
}

pub fn bench_train(config: &TrainBenchConfig) -> Result<BenchReport> {
    let (n, d) = (config.classes, config.dim);
    let spec = SyntheticSpec::identity(n, d, config.mean_scale, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let truth = GaussianModel::draw(&spec, &mut rng)?;
    let train = gaussian_split(&truth, config.samples, &mut rng)?;
    let test = gaussian_split(&truth, config.test_samples, &mut rng)?;
    let test_x = test.widened();
    let batches: Vec<LabeledBatch> = train.batches(config.batch_size).collect::<Result<_, _>>()?;

    let fc_config = FcConfig {
        batch_size: config.batch_size,
        learning_rate: config.fc_learning_rate,
        seed: config.seed,
        ..FcConfig::default()
    };
    let fc = train_fc(&train, None, &fc_config)?;
    let fc_accuracy = fc.head.accuracy(test_x.view(), &test.labels);

    let (fc_converged, fc_converged_epochs, fc_converged_accuracy) = if config.converge {
        let val = gaussian_split(&truth, config.test_samples, &mut rng)?;
        let run = train_fc(
            &train,
            Some(&val),
            &FcConfig {
                convergence: Some(Convergence::default()),
                ..fc_config.clone()
            },
        )?;
        let acc = run.head.accuracy(test_x.view(), &test.labels);
        (Some(run.train_nanos), Some(run.epochs_run()), Some(acc))
    } else {
        (None, None, None)
    };

    let mut slda = LdaModel::init_empty(d, n, CovarianceMode::Plastic, TrainMode::TrainBoth)?;
    let slda_timing = ingest_per_sample(&mut slda, train.widened().view(), &train.labels)?;

    let mut plastic = LdaModel::init_empty(d, n, CovarianceMode::Plastic, TrainMode::TrainBoth)?;
    let plastic_timing = ingest_stream(&mut plastic, batches.iter().cloned().map(Ok), Semantics::Chunk)?;

    let mut fixed = LdaModel::init_empty(d, n, CovarianceMode::Fixed, TrainMode::TrainBoth)?;
    let fixed_timing = ingest_stream(&mut fixed, batches.iter().cloned().map(Ok), Semantics::Chunk)?;

    let times = TrainTimes {
        fc_epoch: fc.train_nanos,
        fc_converged,
        fc_converged_epochs,
        slda_bs1: slda_timing.total_nanos,
        xlda_plastic: plastic_timing.total_nanos,
        xlda_fixed: fixed_timing.total_nanos,
        xlda_mean_update_median: fixed_timing.median_batch_nanos(),
    };
    Ok(BenchReport {
        record: "bench_train".into(),
        dataset: DatasetInfo {
            classes: n,
            dim: d,
            samples: config.samples,
            test_samples: config.test_samples,
            mean_scale: config.mean_scale,
            seed: config.seed,
        },
        batch_size: config.batch_size,
        fc_learning_rate: config.fc_learning_rate,
        speedup: Speedups::from_times(&times),
        times_nanos: times,
        accuracy: TrainAccuracy {
            fc: fc_accuracy,
            fc_converged: fc_converged_accuracy,
            slda_bs1: lda_accuracy(&slda, &test, &test_x)?,
            xlda_plastic: lda_accuracy(&plastic, &test, &test_x)?,
            xlda_fixed: lda_accuracy(&fixed, &test, &test_x)?,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferBenchConfig {
    pub classes: usize,
    pub dim: usize,
    pub queries: usize,
    /// Active classes; `None` means the index default of n/10.
    pub k: Option<usize>,
    pub tables: usize,
    pub bits: usize,
    pub probes: usize,
    /// Standard deviation of the class means.
    pub mean_scale: f64,
    /// Standard deviation of query noise around a class mean.
    pub noise: f64,
    pub seed: u64,
}

impl InferBenchConfig {
    pub fn new(classes: usize, dim: usize) -> Self {
        let ann = AnnConfig::for_classes(classes);
        InferBenchConfig {
            classes,
            dim,
            queries: 200,
            k: None,
            tables: ann.tables,
            bits: ann.bits,
            probes: ann.probes,
            mean_scale: 3.0,
            noise: 0.3,
            seed: 0,
        }
    }
}

/// Build an identity-covariance model from random means, index it and time
/// exact against shortlisted inference query by query.
pub fn bench_infer(config: &InferBenchConfig) -> Result<(InferReport, InferenceBench)> {
    let (n, d) = (config.classes, config.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let means = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal) * config.mean_scale);
    let head = LinearHead::new(means.clone(), Array1::zeros(n))?;
    let model = fc_to_lda(&head, SigmaMode::Identity)?;
    let translated = model.translate(DEFAULT_BETA)?;
    let ann = AnnConfig {
        k: config.k.unwrap_or(AnnConfig::for_classes(n).k),
        tables: config.tables,
        bits: config.bits,
        probes: config.probes,
        ..AnnConfig::for_classes(n)
    };
    let start = Instant::now();
    let index = build_index(&model, ann, config.seed)?;
    let build_nanos = start.elapsed().as_nanos() as u64;

    let queries: Vec<Vec<f64>> = (0..config.queries)
        .map(|_| {
            let y = rng.random_range(0..n);
            means
                .row(y)
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal) * config.noise)
                .collect()
        })
        .collect();
    // Warm caches and allocator before timing.
    for q in queries.iter().take(5) {
        translated.predict_exact(q)?;
        index.query_active(&translated, q, None)?;
    }
    let bench = bench_inference(&translated, &index, queries.iter().map(Vec::as_slice), None)?;
    let report = InferReport {
        record: "bench_infer".into(),
        classes: n,
        dim: d,
        queries: config.queries,
        k: bench.k,
        tables: ann.tables,
        bits: ann.bits,
        probes: ann.probes,
        seed: config.seed,
        build_nanos,
        exact_median_nanos: bench.exact.median_nanos,
        active_median_nanos: bench.active.median_nanos,
        exact_mean_nanos: bench.exact.mean_nanos,
        active_mean_nanos: bench.active.mean_nanos,
        speedup_median: bench.speedup_median,
        speedup_mean: bench.speedup_mean,
        agreement: bench.agreement,
    };
    Ok((report, bench))
}

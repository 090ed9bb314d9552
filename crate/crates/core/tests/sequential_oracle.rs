//! Batched and streamed updates against independent replays: an exact
//! rational replay of the recurrences and a plain f64 per-sample loop.

use ndarray::Array2;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xlda_core::{CovarianceMode, LabeledBatch, LdaModel, Semantics, TrainMode};

fn rat(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

fn int(v: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Exact-arithmetic replay of the streaming recurrences.
struct RationalReplay {
    means: Vec<Vec<BigRational>>,
    counts: Vec<u64>,
    sigma: Vec<Vec<BigRational>>,
    step: u64,
}

impl RationalReplay {
    fn new(n: usize, d: usize) -> Self {
        RationalReplay {
            means: vec![vec![BigRational::zero(); d]; n],
            counts: vec![0; n],
            sigma: vec![vec![BigRational::zero(); d]; d],
            step: 0,
        }
    }

    fn push(&mut self, z: &[f64], y: usize) {
        let z: Vec<BigRational> = z.iter().map(|&v| rat(v)).collect();
        let r: Vec<BigRational> = z.iter().zip(&self.means[y]).map(|(a, b)| a - b).collect();
        let t = int(self.step);
        let t1 = int(self.step + 1);
        for i in 0..r.len() {
            for j in 0..r.len() {
                let delta = &t * &r[i] * &r[j] / &t1;
                self.sigma[i][j] = (&t * &self.sigma[i][j] + delta) / &t1;
            }
        }
        self.step += 1;
        let c = int(self.counts[y]);
        let c1 = int(self.counts[y] + 1);
        for (m, v) in self.means[y].iter_mut().zip(&z) {
            *m = (&c * &*m + v) / &c1;
        }
        self.counts[y] += 1;
    }

    fn means_f64(&self) -> Array2<f64> {
        let (n, d) = (self.means.len(), self.means[0].len());
        Array2::from_shape_fn((n, d), |(k, j)| self.means[k][j].to_f64().unwrap())
    }

    fn sigma_f64(&self) -> Array2<f64> {
        let d = self.sigma.len();
        Array2::from_shape_fn((d, d), |(i, j)| self.sigma[i][j].to_f64().unwrap())
    }
}

fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = b.mapv(|v| v * v).sum().sqrt().max(f64::MIN_POSITIVE);
    diff / scale
}

fn random_batch(m: usize, n: usize, d: usize, seed: u64) -> LabeledBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((m, d), || rng.random_range(-3.0..3.0));
    let y = (0..m).map(|_| rng.random_range(0..n as u32)).collect();
    LabeledBatch::new(x, y).unwrap()
}

fn plastic(d: usize, n: usize) -> LdaModel {
    LdaModel::init_empty(d, n, CovarianceMode::Plastic, TrainMode::TrainBoth).unwrap()
}

#[test]
fn streaming_matches_exact_rational_replay() {
    for seed in 0..6 {
        let (n, d, m) = (3, 3, 40);
        let batch = random_batch(m, n, d, seed);
        let mut oracle = RationalReplay::new(n, d);
        let mut model = plastic(d, n);
        for i in 0..m {
            oracle.push(batch.row(i), batch.labels()[i] as usize);
            model.update_sample(batch.row(i), batch.labels()[i] as usize).unwrap();
        }
        assert_eq!(model.stats().counts(), oracle.counts.as_slice());
        assert_eq!(model.covariance().step(), oracle.step);
        assert!(rel_err(&model.stats().means().to_owned(), &oracle.means_f64()) <= 1e-12);
        assert!(rel_err(&model.covariance().sigma().to_owned(), &oracle.sigma_f64()) <= 1e-12);
    }
}

#[test]
fn exact_semantics_batch_matches_rational_replay() {
    let (n, d) = (4, 2);
    let mut oracle = RationalReplay::new(n, d);
    let mut model = plastic(d, n);
    for (i, size) in [5usize, 1, 17, 9].into_iter().enumerate() {
        let batch = random_batch(size, n, d, 100 + i as u64);
        for j in 0..size {
            oracle.push(batch.row(j), batch.labels()[j] as usize);
        }
        model.batch_update_covariance(&batch, Semantics::Exact).unwrap();
    }
    assert!(rel_err(&model.covariance().sigma().to_owned(), &oracle.sigma_f64()) <= 1e-12);
    assert!(rel_err(&model.stats().means().to_owned(), &oracle.means_f64()) <= 1e-12);
}

#[test]
fn batched_means_match_rational_replay() {
    let (n, d) = (5, 3);
    let mut oracle = RationalReplay::new(n, d);
    let mut model = LdaModel::init_empty(d, n, CovarianceMode::Fixed, TrainMode::TrainBoth).unwrap();
    for i in 0..4 {
        let batch = random_batch(30, n, d, 7 + i);
        for j in 0..batch.len() {
            oracle.push(batch.row(j), batch.labels()[j] as usize);
        }
        model.batch_update_means(&batch).unwrap();
    }
    assert_eq!(model.stats().counts(), oracle.counts.as_slice());
    assert!(rel_err(&model.stats().means().to_owned(), &oracle.means_f64()) <= 1e-12);
}

fn batch_strategy() -> impl Strategy<Value = (usize, usize, Vec<usize>, u64)> {
    (1usize..40, 1usize..12, prop::collection::vec(0usize..80, 1..5), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batched_means_equal_sequential((n, d, sizes, seed) in batch_strategy()) {
        let mut batched = LdaModel::init_empty(d, n, CovarianceMode::Fixed, TrainMode::TrainBoth).unwrap();
        let mut sequential = batched.clone();
        for (i, &m) in sizes.iter().enumerate() {
            let batch = random_batch(m, n, d, seed.wrapping_add(i as u64));
            batched.batch_update_means(&batch).unwrap();
            for j in 0..m {
                sequential.update_sample(batch.row(j), batch.labels()[j] as usize).unwrap();
            }
        }
        prop_assert_eq!(batched.stats().counts(), sequential.stats().counts());
        let err = rel_err(&batched.stats().means().to_owned(), &sequential.stats().means().to_owned());
        prop_assert!(err <= 1e-12, "relative error {}", err);
    }

    #[test]
    fn counts_are_conserved((n, d, sizes, seed) in batch_strategy()) {
        let mut model = plastic(d, n);
        let mut total = 0u64;
        for (i, &m) in sizes.iter().enumerate() {
            let batch = random_batch(m, n, d, seed.wrapping_add(i as u64));
            model.ingest_batch(&batch, Semantics::Chunk).unwrap();
            total += m as u64;
        }
        prop_assert_eq!(model.stats().counts().iter().sum::<u64>(), total);
        prop_assert_eq!(model.covariance().step(), total);
    }

    #[test]
    fn exact_semantics_equal_sequential((n, d, sizes, seed) in batch_strategy()) {
        let mut batched = plastic(d, n);
        let mut sequential = batched.clone();
        for (i, &m) in sizes.iter().enumerate() {
            let batch = random_batch(m, n, d, seed.wrapping_add(i as u64));
            batched.batch_update_covariance(&batch, Semantics::Exact).unwrap();
            for j in 0..m {
                sequential.update_sample(batch.row(j), batch.labels()[j] as usize).unwrap();
            }
        }
        prop_assert_eq!(batched.covariance().sigma(), sequential.covariance().sigma());
        prop_assert_eq!(batched.stats().means(), sequential.stats().means());
    }

    #[test]
    fn single_row_chunk_equals_exact(n in 1usize..10, d in 1usize..8, seed in any::<u64>()) {
        let mut chunk = plastic(d, n);
        let mut exact = chunk.clone();
        for i in 0..20 {
            let batch = random_batch(1, n, d, seed.wrapping_add(i));
            chunk.ingest_batch(&batch, Semantics::Chunk).unwrap();
            exact.ingest_batch(&batch, Semantics::Exact).unwrap();
        }
        let err = rel_err(&chunk.covariance().sigma().to_owned(), &exact.covariance().sigma().to_owned());
        prop_assert!(err <= 1e-12);
        let err = rel_err(&chunk.stats().means().to_owned(), &exact.stats().means().to_owned());
        prop_assert!(err <= 1e-12);
    }

    #[test]
    fn covariance_stays_symmetric_psd((n, d, sizes, seed) in batch_strategy()) {
        let mut model = plastic(d, n);
        for (i, &m) in sizes.iter().enumerate() {
            let batch = random_batch(m, n, d, seed.wrapping_add(i as u64));
            model.ingest_batch(&batch, Semantics::Chunk).unwrap();
        }
        let s = model.covariance().sigma();
        prop_assert_eq!(s.to_owned(), s.t().to_owned());
        for i in 0..d {
            prop_assert!(s[[i, i]] >= 0.0);
        }
    }
}

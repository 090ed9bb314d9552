//! File formats: round trips, corruption handling and streamed ingestion.

use std::fs;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xlda_core::io::{load_head, save_head, EmbeddingFileHeader};
use xlda_core::{
    generate_synthetic, load_checkpoint, read_embeddings, save_checkpoint, CovarianceMode, EmbeddingData,
    EmbeddingReader, Error, LdaModel, Semantics, SyntheticSpec, TrainMode,
};

fn random_data(rows: usize, dim: usize, classes: u32, seed: u64) -> EmbeddingData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((rows, dim), || rng.random::<f32>() * 8.0 - 4.0);
    let y = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    EmbeddingData::new(x, y, classes).unwrap()
}

#[test]
fn embedding_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.xemb");
    let data = random_data(1000, 64, 37, 1);
    xlda_core::io::write_embeddings(&path, &data).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().len(), 25 + 1000 * 64 * 4 + 1000 * 4);
    let back = read_embeddings(&path).unwrap();
    let bits = |d: &EmbeddingData| d.embeddings.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&data));
    assert_eq!(back.labels, data.labels);
    assert_eq!(back.num_classes, 37);

    let reader = EmbeddingReader::open(&path).unwrap();
    assert_eq!(
        *reader.header(),
        EmbeddingFileHeader {
            version: 1,
            n_samples: 1000,
            dim: 64,
            num_classes: 37,
            dtype: 0
        }
    );
}

#[test]
fn truncated_and_padded_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.xemb");
    xlda_core::io::write_embeddings(&path, &random_data(10, 3, 2, 2)).unwrap();
    let bytes = fs::read(&path).unwrap();

    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(EmbeddingReader::open(&path), Err(Error::TruncatedPayload { .. })));
    fs::write(&path, &bytes[..10]).unwrap();
    assert!(matches!(EmbeddingReader::open(&path), Err(Error::TruncatedPayload { .. })));

    let mut padded = bytes.clone();
    padded.extend_from_slice(&[0; 5]);
    fs::write(&path, &padded).unwrap();
    assert!(matches!(EmbeddingReader::open(&path), Err(Error::TrailingData { extra: 5 })));

    let mut bad = bytes.clone();
    bad[0..4].copy_from_slice(b"XMDL");
    fs::write(&path, &bad).unwrap();
    assert!(matches!(EmbeddingReader::open(&path), Err(Error::BadMagic { .. })));

    let mut bad = bytes;
    bad[4] = 9;
    fs::write(&path, &bad).unwrap();
    assert!(matches!(EmbeddingReader::open(&path), Err(Error::UnsupportedVersion(9))));
}

#[test]
fn out_of_range_label_on_disk_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.xemb");
    xlda_core::io::write_embeddings(&path, &random_data(4, 2, 3, 3)).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 4;
    bytes[last..].copy_from_slice(&7u32.to_le_bytes());
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_embeddings(&path), Err(Error::LabelOutOfRange { label: 7, .. })));
}

#[test]
fn streamed_batches_fold_like_the_whole_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.xemb");
    let data = random_data(5000, 16, 40, 4);
    xlda_core::io::write_embeddings(&path, &data).unwrap();

    let fresh = || LdaModel::init_empty(16, 40, CovarianceMode::Plastic, TrainMode::TrainBoth).unwrap();
    let mut streamed = fresh();
    let mut sizes = Vec::new();
    for batch in EmbeddingReader::open(&path).unwrap().batches(512) {
        let batch = batch.unwrap();
        sizes.push(batch.len());
        streamed.ingest_batch(&batch, Semantics::Chunk).unwrap();
    }
    assert_eq!(sizes.len(), 10);
    assert!(sizes[..9].iter().all(|&s| s == 512));

    let mut whole = fresh();
    for batch in data.batches(512) {
        whole.ingest_batch(&batch.unwrap(), Semantics::Chunk).unwrap();
    }
    assert_eq!(streamed.stats(), whole.stats());
    assert_eq!(streamed.covariance(), whole.covariance());
}

#[test]
fn checkpoint_reload_preserves_logits_exactly() {
    let spec = SyntheticSpec::identity(30, 12, 2.0, 5);
    let data = generate_synthetic(&spec).unwrap();
    let mut model = LdaModel::init_empty(12, 30, CovarianceMode::Plastic, TrainMode::TrainBoth).unwrap();
    for b in data.train.batches(100) {
        model.ingest_batch(&b.unwrap(), Semantics::Chunk).unwrap();
    }
    model.set_covariance_mode(CovarianceMode::Fixed);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.xmdl");
    save_checkpoint(&path, &model, 0.25).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.beta, 0.25);
    assert_eq!(back.model.stats(), model.stats());
    assert_eq!(back.model.covariance(), model.covariance());
    assert_eq!(back.model.train_mode(), model.train_mode());

    let before = model.translate(0.25).unwrap();
    let after = back.model.translate(0.25).unwrap();
    let test = data.test.widened();
    for row in test.rows() {
        let x = row.as_slice().unwrap();
        let (a, b) = (before.predict_exact(x).unwrap(), after.predict_exact(x).unwrap());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.logits), bits(&b.logits));
    }

    let head_path = dir.path().join("h.xfch");
    save_head(&head_path, &before.head).unwrap();
    assert_eq!(load_head(&head_path).unwrap(), before.head);

    assert!(matches!(load_checkpoint(&head_path), Err(Error::BadMagic { .. })));
}

#[test]
fn every_train_mode_survives_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.xmdl");
    for mode in [TrainMode::TrainBoth, TrainMode::TrainMuOnly, TrainMode::TrainSigmaOnly, TrainMode::Frozen] {
        for cov in [CovarianceMode::Plastic, CovarianceMode::Fixed] {
            let m = LdaModel::init_empty(3, 2, cov, mode).unwrap();
            save_checkpoint(&path, &m, 1e-4).unwrap();
            let back = load_checkpoint(&path).unwrap().model;
            assert_eq!(back.train_mode(), mode);
            assert_eq!(back.covariance().mode(), cov);
        }
    }
}

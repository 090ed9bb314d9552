//! Streaming linear discriminant analysis for very large class counts.
//!
//! Per-class means and a shared covariance are accumulated from a stream of
//! labeled embeddings, either one sample at a time or in batches whose cost is
//! independent of the number of classes. Models convert to and from plain
//! linear heads, and inference can be restricted to a shortlist of classes
//! found by locality-sensitive hashing over the class means.

pub mod ann;
pub mod batch;
pub mod convert;
pub mod error;
pub mod fc;
pub mod io;
pub mod linalg;
pub mod model;
pub mod slda;
pub mod synth;

pub use ann::{bench_inference, build_index, AnnConfig, AnnIndex, InactiveFill, InferenceBench};
pub use batch::{ingest_per_sample, ingest_stream, unique_counts, LabelCounts, Semantics, TimingReport};
pub use convert::{binary_posterior, fc_to_lda, lda_to_fc, BinaryLdaSpec, PosteriorEval, SigmaMode};
pub use error::{Error, Result};
pub use fc::{train_fc, Convergence, FcConfig, FcRun, Schedule};
pub use io::{load_checkpoint, read_embeddings, save_checkpoint, EmbeddingData, EmbeddingReader, EmbeddingWriter, ModelCheckpoint};
pub use model::{
    argmax, ClassStats, CovarianceMode, Embedding, LabeledBatch, LdaModel, LinearHead, SharedCovariance,
    ShrinkagePrecision, TrainMode,
};
pub use slda::{Prediction, TranslatedModel, DEFAULT_BETA};
pub use synth::{generate_synthetic, CovarianceSpec, SyntheticData, SyntheticSpec};

//! Binary persistence: XEMB embedding files, XMDL model checkpoints and XFCH
//! linear heads. Every format is little-endian, versioned and magic-guarded.
//!
//! XEMB (version 1):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "XEMB"
//! 4       4     version (u32)
//! 8       8     n_samples (u64)
//! 16      4     dim (u32)
//! 20      4     num_classes (u32)
//! 24      1     dtype (u8, 0 = f32)
//! 25      ...   n_samples * dim f32, row-major
//! ...     ...   n_samples u32 labels
//! ```
//!
//! XMDL (version 1): magic "XMDL", version u32, dim u32, num_classes u32,
//! step u64, flags u8 (bit 0 = plastic covariance, bits 1-2 = training mode),
//! beta f64, then counts (n × u64), means (n × d f64, row-major) and Σ
//! (d × d f64, row-major).
//!
//! XFCH (version 1): magic "XFCH", version u32, dim u32, num_classes u32,
//! weights (n × d f64, row-major), bias (n × f64).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{
    ClassStats, CovarianceMode, LabeledBatch, LdaModel, LinearHead, SharedCovariance, TrainMode,
};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"XEMB";
pub const MODEL_MAGIC: [u8; 4] = *b"XMDL";
pub const HEAD_MAGIC: [u8; 4] = *b"XFCH";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const EMBEDDING_HEADER_LEN: u64 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    pub version: u32,
    pub n_samples: u64,
    pub dim: u32,
    pub num_classes: u32,
    pub dtype: u8,
}

impl EmbeddingFileHeader {
    fn encode(&self) -> [u8; EMBEDDING_HEADER_LEN as usize] {
        let mut buf = [0u8; EMBEDDING_HEADER_LEN as usize];
        buf[0..4].copy_from_slice(&EMBEDDING_MAGIC);
        buf[4..8].copy_from_slice(&self.version.to_le_bytes());
        buf[8..16].copy_from_slice(&self.n_samples.to_le_bytes());
        buf[16..20].copy_from_slice(&self.dim.to_le_bytes());
        buf[20..24].copy_from_slice(&self.num_classes.to_le_bytes());
        buf[24] = self.dtype;
        buf
    }

    fn decode(buf: &[u8; EMBEDDING_HEADER_LEN as usize]) -> Result<Self> {
        check_magic(&buf[0..4], EMBEDDING_MAGIC)?;
        let header = EmbeddingFileHeader {
            version: u32::from_le_bytes(buf[4..8].try_into().unwrap()),
            n_samples: u64::from_le_bytes(buf[8..16].try_into().unwrap()),
            dim: u32::from_le_bytes(buf[16..20].try_into().unwrap()),
            num_classes: u32::from_le_bytes(buf[20..24].try_into().unwrap()),
            dtype: buf[24],
        };
        if header.version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(header.version));
        }
        if header.dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(header.dtype));
        }
        Ok(header)
    }

    fn embeddings_len(&self) -> u64 {
        self.n_samples * self.dim as u64 * 4
    }

    fn payload_len(&self) -> u64 {
        self.embeddings_len() + self.n_samples * 4
    }
}

fn check_magic(found: &[u8], expected: [u8; 4]) -> Result<()> {
    let found: [u8; 4] = found.try_into().expect("4-byte magic");
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn check_length(file: &File, expected: u64) -> Result<()> {
    let actual = file.metadata()?.len();
    if actual < expected {
        return Err(Error::TruncatedPayload { expected, actual });
    }
    if actual > expected {
        return Err(Error::TrailingData {
            extra: actual - expected,
        });
    }
    Ok(())
}

/// Embeddings exactly as stored: f32 rows plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingData {
    pub embeddings: Array2<f32>,
    pub labels: Vec<u32>,
    pub num_classes: u32,
}

impl EmbeddingData {
    pub fn new(embeddings: Array2<f32>, labels: Vec<u32>, num_classes: u32) -> Result<Self> {
        if embeddings.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: embeddings.nrows(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as u64,
                num_classes: num_classes as usize,
            });
        }
        Ok(EmbeddingData {
            embeddings: embeddings.as_standard_layout().into_owned(),
            labels,
            num_classes,
        })
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

    /// Embeddings widened to f64.
    pub fn widened(&self) -> Array2<f64> {
        self.embeddings.mapv(f64::from)
    }

    pub fn to_batch(&self) -> LabeledBatch {
        LabeledBatch::new(self.widened(), self.labels.clone()).expect("row count checked")
    }

    /// Consecutive widened batches of at most `size` rows.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = Result<LabeledBatch>> + '_ {
        assert!(size > 0, "batch size must be positive");
        let n = self.len();
        (0..n).step_by(size).map(move |start| {
            let end = (start + size).min(n);
            LabeledBatch::new(
                self.embeddings
                    .slice(ndarray::s![start..end, ..])
                    .mapv(f64::from),
                self.labels[start..end].to_vec(),
            )
        })
    }
}

/// Streaming XEMB writer. Labels are held back and written after the
/// embedding block on `finish`, which also patches the sample count.
pub struct EmbeddingWriter {
    out: BufWriter<File>,
    dim: usize,
    num_classes: u32,
    labels: Vec<u32>,
}

impl EmbeddingWriter {
    pub fn create(path: impl AsRef<Path>, dim: usize, num_classes: u32) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = EmbeddingFileHeader {
            version: FORMAT_VERSION,
            n_samples: 0,
            dim: dim as u32,
            num_classes,
            dtype: DTYPE_F32,
        };
        out.write_all(&header.encode())?;
        Ok(EmbeddingWriter {
            out,
            dim,
            num_classes,
            labels: Vec::new(),
        })
    }

    pub fn push(&mut self, row: &[f32], label: u32) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        if label >= self.num_classes {
            return Err(Error::LabelOutOfRange {
                label: label as u64,
                num_classes: self.num_classes as usize,
            });
        }
        let mut buf = Vec::with_capacity(row.len() * 4);
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&buf)?;
        self.labels.push(label);
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64> {
        let mut buf = Vec::with_capacity(self.labels.len() * 4);
        for l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        self.out.write_all(&buf)?;
        let n = self.labels.len() as u64;
        self.out.seek(SeekFrom::Start(8))?;
        self.out.write_all(&n.to_le_bytes())?;
        self.out.flush()?;
        Ok(n)
    }
}

pub fn write_embeddings(path: impl AsRef<Path>, data: &EmbeddingData) -> Result<()> {
    let mut w = EmbeddingWriter::create(path, data.dim(), data.num_classes)?;
    for (row, &y) in data.embeddings.rows().into_iter().zip(&data.labels) {
        w.push(row.as_slice().expect("standard layout"), y)?;
    }
    w.finish()?;
    Ok(())
}

/// Streaming XEMB reader. Embeddings and labels are read through separate
/// handles, so batches come off disk without loading the whole file.
pub struct EmbeddingReader {
    header: EmbeddingFileHeader,
    rows: BufReader<File>,
    labels: BufReader<File>,
    remaining: u64,
}

impl EmbeddingReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = File::open(path)?;
        let mut buf = [0u8; EMBEDDING_HEADER_LEN as usize];
        let len = file.metadata()?.len();
        if len < EMBEDDING_HEADER_LEN {
            return Err(Error::TruncatedPayload {
                expected: EMBEDDING_HEADER_LEN,
                actual: len,
            });
        }
        file.read_exact(&mut buf)?;
        let header = EmbeddingFileHeader::decode(&buf)?;
        check_length(&file, EMBEDDING_HEADER_LEN + header.payload_len())?;
        let rows = BufReader::with_capacity(1 << 20, file);
        let mut labels_file = File::open(path)?;
        labels_file.seek(SeekFrom::Start(EMBEDDING_HEADER_LEN + header.embeddings_len()))?;
        Ok(EmbeddingReader {
            header,
            rows,
            labels: BufReader::new(labels_file),
            remaining: header.n_samples,
        })
    }

    pub fn header(&self) -> &EmbeddingFileHeader {
        &self.header
    }

    /// Read up to `max_rows` rows as raw f32; `None` once exhausted.
    pub fn next_chunk(&mut self, max_rows: usize) -> Result<Option<EmbeddingData>> {
        if self.remaining == 0 || max_rows == 0 {
            return Ok(None);
        }
        let rows = (max_rows as u64).min(self.remaining) as usize;
        let d = self.header.dim as usize;
        let mut raw = vec![0u8; rows * d * 4];
        self.rows.read_exact(&mut raw)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mut raw = vec![0u8; rows * 4];
        self.labels.read_exact(&mut raw)?;
        let labels: Vec<u32> = raw
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        self.remaining -= rows as u64;
        let embeddings = Array2::from_shape_vec((rows, d), values).expect("sized buffer");
        EmbeddingData::new(embeddings, labels, self.header.num_classes).map(Some)
    }

    /// Widened batches of `batch_size` rows.
    pub fn batches(mut self, batch_size: usize) -> impl Iterator<Item = Result<LabeledBatch>> {
        assert!(batch_size > 0, "batch size must be positive");
        std::iter::from_fn(move || match self.next_chunk(batch_size) {
            Ok(Some(chunk)) => Some(Ok(chunk.to_batch())),
            Ok(None) => None,
            Err(e) => {
                self.remaining = 0;
                Some(Err(e))
            }
        })
    }

    pub fn read_all(mut self) -> Result<EmbeddingData> {
        let n = self.remaining as usize;
        let d = self.header.dim as usize;
        let num_classes = self.header.num_classes;
        match self.next_chunk(n)? {
            Some(data) => Ok(data),
            None => EmbeddingData::new(Array2::zeros((0, d)), Vec::new(), num_classes),
        }
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingData> {
    EmbeddingReader::open(path)?.read_all()
}

struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::TruncatedPayload {
                expected: (self.pos + n) as u64,
                actual: self.buf.len() as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        check_magic(self.take(4)?, expected)
    }
    fn version(&mut self) -> Result<()> {
        match self.u32()? {
            FORMAT_VERSION => Ok(()),
            v => Err(Error::UnsupportedVersion(v)),
        }
    }
    fn finish(&self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(Error::TrailingData { extra: extra as u64 }),
        }
    }
}

/// A model plus the shrinkage it is meant to be translated with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: LdaModel,
    pub beta: f64,
}

pub fn encode_checkpoint(model: &LdaModel, beta: f64) -> Vec<u8> {
    let (n, d) = (model.num_classes(), model.dim());
    let mut w = ByteWriter(Vec::with_capacity(45 + n * 8 + (n + d) * d * 8));
    w.0.extend_from_slice(&MODEL_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(d as u32);
    w.u32(n as u32);
    w.u64(model.covariance().step());
    let plastic = (model.covariance().mode() == CovarianceMode::Plastic) as u8;
    w.u8(plastic | (model.train_mode().code() << 1));
    w.f64(beta);
    for &c in model.stats().counts() {
        w.u64(c);
    }
    w.f64s(model.stats().means().iter());
    w.f64s(model.covariance().sigma().iter());
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let mut r = ByteReader { buf: bytes, pos: 0 };
    r.magic(MODEL_MAGIC)?;
    r.version()?;
    let d = r.u32()? as usize;
    let n = r.u32()? as usize;
    let step = r.u64()?;
    let flags = r.u8()?;
    let beta = r.f64()?;
    let mode = if flags & 1 == 1 {
        CovarianceMode::Plastic
    } else {
        CovarianceMode::Fixed
    };
    let train_mode = TrainMode::from_code((flags >> 1) & 0b11)
        .ok_or_else(|| Error::InvalidSpec(format!("bad mode flags {flags:#x}")))?;
    if flags >> 3 != 0 {
        return Err(Error::InvalidSpec(format!("bad mode flags {flags:#x}")));
    }
    let counts = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let means = Array2::from_shape_vec((n, d), r.f64s(n * d)?).expect("sized buffer");
    let sigma = Array2::from_shape_vec((d, d), r.f64s(d * d)?).expect("sized buffer");
    r.finish()?;
    let model = LdaModel::from_parts(
        ClassStats::from_parts(means, counts)?,
        SharedCovariance::new(sigma, step, mode)?,
        train_mode,
    )?;
    Ok(ModelCheckpoint { model, beta })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &LdaModel, beta: f64) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, beta))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

pub fn encode_head(head: &LinearHead) -> Vec<u8> {
    let (n, d) = (head.num_classes(), head.dim());
    let mut w = ByteWriter(Vec::with_capacity(16 + n * (d + 1) * 8));
    w.0.extend_from_slice(&HEAD_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(d as u32);
    w.u32(n as u32);
    w.f64s(head.weights().iter());
    w.f64s(head.bias().iter());
    w.0
}

pub fn decode_head(bytes: &[u8]) -> Result<LinearHead> {
    let mut r = ByteReader { buf: bytes, pos: 0 };
    r.magic(HEAD_MAGIC)?;
    r.version()?;
    let d = r.u32()? as usize;
    let n = r.u32()? as usize;
    let weights = Array2::from_shape_vec((n, d), r.f64s(n * d)?).expect("sized buffer");
    let bias = Array1::from(r.f64s(n)?);
    r.finish()?;
    LinearHead::new(weights, bias)
}

pub fn save_head(path: impl AsRef<Path>, head: &LinearHead) -> Result<()> {
    std::fs::write(path, encode_head(head))?;
    Ok(())
}

pub fn load_head(path: impl AsRef<Path>) -> Result<LinearHead> {
    decode_head(&std::fs::read(path)?)
}

/// Narrow f64 rows to the f32 storage type.
pub fn narrow(x: ArrayView2<'_, f64>) -> Array2<f32> {
    x.mapv(|v| v as f32)
}

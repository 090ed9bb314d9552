//! Active-class selection: random-hyperplane LSH shortlists the nearest class
//! means, exact Euclidean re-ranking picks `k`, and logits are computed only
//! for those classes.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batch::median;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{argmax, check_finite, LdaModel};
use crate::slda::{Prediction, TranslatedModel};

/// Largest signature width; tables are dense arrays of `2^bits` buckets.
pub const MAX_BITS: usize = 24;

/// Value written into the logits of classes outside the shortlist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InactiveFill {
    Zero,
    NegInfinity,
}

impl InactiveFill {
    fn value(self) -> f64 {
        match self {
            InactiveFill::Zero => 0.0,
            InactiveFill::NegInfinity => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnConfig {
    /// Active class count.
    pub k: usize,
    pub tables: usize,
    /// Hyperplanes per table.
    pub bits: usize,
    /// Multi-probe depth: every bucket within this Hamming distance of the
    /// query signature is visited.
    pub probes: usize,
    pub fill: InactiveFill,
}

fn default_bits(num_classes: usize) -> usize {
    let mut bits = 12;
    let mut n = 1000;
    while n * 4 <= num_classes && bits < 20 {
        n *= 4;
        bits += 1;
    }
    bits
}

impl AnnConfig {
    /// Defaults for `num_classes` classes: `k = n/10`, 16 tables, probe
    /// depth 2, zero fill. Tables have 12 bits up to 1000 classes and one
    /// more bit per factor of 4 beyond, which keeps the candidate union near
    /// a fixed multiple of `k`.
    pub fn for_classes(num_classes: usize) -> Self {
        AnnConfig {
            k: (num_classes / 10).max(1),
            tables: 16,
            bits: default_bits(num_classes),
            probes: 2,
            fill: InactiveFill::Zero,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.k == 0 || self.k > num_classes {
            return Err(Error::InvalidConfig(format!(
                "k must lie in [1, {num_classes}], got {}",
                self.k
            )));
        }
        if self.tables == 0 {
            return Err(Error::InvalidConfig("tables must be >= 1".into()));
        }
        if self.bits == 0 || self.bits > MAX_BITS {
            return Err(Error::InvalidConfig(format!(
                "bits must lie in [1, {MAX_BITS}], got {}",
                self.bits
            )));
        }
        if self.probes > self.bits {
            return Err(Error::InvalidConfig("probes cannot exceed bits".into()));
        }
        Ok(())
    }
}

/// One hash table as a CSR bucket array.
#[derive(Debug, Clone, PartialEq)]
struct Table {
    bucket_starts: Vec<u32>,
    ids: Vec<u32>,
}

impl Table {
    fn bucket(&self, signature: u32) -> &[u32] {
        let s = signature as usize;
        &self.ids[self.bucket_starts[s] as usize..self.bucket_starts[s + 1] as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnIndex {
    config: AnnConfig,
    dim: usize,
    num_classes: usize,
    /// `tables * bits` hyperplane normals, each of length `dim`.
    normals: Vec<f64>,
    /// Hyperplane offsets; planes pass through the centroid of the live means.
    offsets: Vec<f64>,
    tables: Vec<Table>,
    probe_masks: Vec<u32>,
    /// Masks one Hamming step beyond `probe_masks`, visited on a shortfall.
    deep_masks: Vec<u32>,
    live: Vec<u32>,
    /// Row-major means of all classes, kept for exact re-ranking.
    means: Vec<f64>,
    source_step: u64,
    source_revision: u64,
}

/// Every mask of `bits` bits with at most `depth` bits set, by weight.
fn probe_masks(bits: usize, depth: usize) -> Vec<u32> {
    let limit = 1u64 << bits;
    let mut masks = vec![0u32];
    for weight in 1..=depth.min(bits) {
        // Gosper's hack walks all masks of one popcount in increasing order.
        let mut m: u64 = (1 << weight) - 1;
        while m < limit {
            masks.push(m as u32);
            let c = m & m.wrapping_neg();
            let r = m + c;
            m = (((r ^ m) >> 2) / c) | r;
        }
    }
    masks
}

impl AnnIndex {
    /// Hash every live class mean into `config.tables` tables. Hyperplanes are
    /// drawn table by table from one seeded stream, so an index with more
    /// tables extends one with fewer.
    pub fn build(model: &LdaModel, config: AnnConfig, seed: u64) -> Result<Self> {
        let (n, d) = (model.num_classes(), model.dim());
        config.validate(n)?;
        let live: Vec<u32> = model.stats().live_classes().map(|k| k as u32).collect();
        if live.is_empty() {
            return Err(Error::NoLiveClasses);
        }
        let means = model
            .stats()
            .means()
            .as_standard_layout()
            .into_owned()
            .into_raw_vec_and_offset()
            .0;

        let mut centroid = vec![0.0; d];
        for &k in &live {
            for (c, v) in centroid.iter_mut().zip(&means[k as usize * d..(k as usize + 1) * d]) {
                *c += v;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= live.len() as f64);

        let planes = config.tables * config.bits;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normals: Vec<f64> = (0..planes * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let offsets: Vec<f64> = normals.chunks_exact(d).map(|h| linalg::dot(h, &centroid)).collect();

        let mut index = AnnIndex {
            config,
            dim: d,
            num_classes: n,
            normals,
            offsets,
            tables: Vec::with_capacity(config.tables),
            probe_masks: probe_masks(config.bits, config.probes),
            deep_masks: probe_masks(config.bits, config.probes + 1)
                .split_off(probe_masks(config.bits, config.probes).len()),
            live,
            means,
            source_step: model.covariance().step(),
            source_revision: model.revision(),
        };

        let buckets = 1usize << config.bits;
        for t in 0..config.tables {
            let sigs: Vec<u32> = index
                .live
                .iter()
                .map(|&k| index.signature(t, index.mean(k as usize)))
                .collect();
            let mut starts = vec![0u32; buckets + 1];
            for &s in &sigs {
                starts[s as usize + 1] += 1;
            }
            for b in 0..buckets {
                starts[b + 1] += starts[b];
            }
            let mut cursor = starts.clone();
            let mut ids = vec![0u32; sigs.len()];
            for (&s, &k) in sigs.iter().zip(&index.live) {
                ids[cursor[s as usize] as usize] = k;
                cursor[s as usize] += 1;
            }
            index.tables.push(Table {
                bucket_starts: starts,
                ids,
            });
        }
        Ok(index)
    }

    pub fn config(&self) -> &AnnConfig {
        &self.config
    }

    pub fn live_classes(&self) -> &[u32] {
        &self.live
    }

    fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    fn signature(&self, table: usize, x: &[f64]) -> u32 {
        let d = self.dim;
        let mut sig = 0u32;
        for b in 0..self.config.bits {
            let p = table * self.config.bits + b;
            let h = &self.normals[p * d..(p + 1) * d];
            if linalg::dot(h, x) > self.offsets[p] {
                sig |= 1 << b;
            }
        }
        sig
    }

    /// Number of ids stored in each table; every live class appears once per table.
    pub fn table_sizes(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.ids.len()).collect()
    }

    pub fn is_stale(&self, model: &LdaModel) -> bool {
        self.source_step != model.covariance().step() || self.source_revision != model.revision()
    }

    /// Union of all probed buckets, deduplicated, in discovery order.
    pub fn candidates(&self, x: &[f64]) -> Vec<u32> {
        self.probe(x, 0)
    }

    /// Union of probed buckets. When it holds fewer than `want` classes the
    /// probe goes one Hamming step deeper before giving up.
    fn probe(&self, x: &[f64], want: usize) -> Vec<u32> {
        let mut seen = vec![false; self.num_classes];
        let mut out = Vec::new();
        let sigs: Vec<u32> = (0..self.tables.len()).map(|t| self.signature(t, x)).collect();
        let mut visit = |masks: &[u32], out: &mut Vec<u32>| {
            for (table, &sig) in self.tables.iter().zip(&sigs) {
                for &mask in masks {
                    for &k in table.bucket(sig ^ mask) {
                        if !seen[k as usize] {
                            seen[k as usize] = true;
                            out.push(k);
                        }
                    }
                }
            }
        };
        visit(&self.probe_masks, &mut out);
        if out.len() < want {
            visit(&self.deep_masks, &mut out);
        }
        out
    }

    /// The `k` live classes nearest to `x` among the probed candidates,
    /// falling back to every live class when probing finds fewer than `k`.
    pub fn shortlist(&self, x: &[f64], k: usize) -> Vec<u32> {
        let k = k.min(self.live.len());
        let mut cands = self.probe(x, k);
        if cands.len() < k {
            cands = self.live.clone();
        }
        let mut scored: Vec<(f64, u32)> = cands
            .into_iter()
            .map(|c| (linalg::squared_distance(x, self.mean(c as usize)), c))
            .collect();
        let by_distance = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_distance);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_distance);
        scored.into_iter().map(|(_, c)| c).collect()
    }

    /// Logits over the shortlist only; every other class receives the fill
    /// value. `k` defaults to the configured active count.
    pub fn query_active(&self, head: &TranslatedModel, x: &[f64], k: Option<usize>) -> Result<Prediction> {
        if head.source_step != self.source_step || head.source_revision() != self.source_revision {
            return Err(Error::StaleIndex);
        }
        if head.num_classes() != self.num_classes {
            return Err(Error::StaleIndex);
        }
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        check_finite(x)?;
        let k = k.unwrap_or(self.config.k);
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        let mut logits = vec![self.config.fill.value(); self.num_classes];
        for c in self.shortlist(x, k) {
            logits[c as usize] = head.head.logit(c as usize, x);
        }
        let (class, _) = argmax(logits.iter().copied());
        Ok(Prediction { logits, class })
    }
}

/// Build an LSH index over the live class means of `model`.
pub fn build_index(model: &LdaModel, config: AnnConfig, seed: u64) -> Result<AnnIndex> {
    AnnIndex::build(model, config, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferencePath {
    Exact,
    Active,
}

/// One timed query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: usize,
    pub path: InferencePath,
    pub nanos: u64,
    pub argmax: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_nanos: f64,
    pub median_nanos: u64,
}

impl LatencySummary {
    fn from_nanos(values: &[u64]) -> Self {
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64
        };
        LatencySummary {
            mean_nanos: mean,
            median_nanos: median(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceBench {
    pub records: Vec<QueryRecord>,
    pub exact: LatencySummary,
    pub active: LatencySummary,
    /// Exact over active median latency.
    pub speedup_median: f64,
    /// Exact over active mean latency.
    pub speedup_mean: f64,
    /// Fraction of queries where both paths chose the same class.
    pub agreement: f64,
    pub k: usize,
}

/// Time both inference paths on every query, one sample at a time.
///
/// The two paths alternate per query so slow drifts in machine load affect
/// both equally.
pub fn bench_inference<'a, Q>(head: &TranslatedModel, index: &AnnIndex, queries: Q, k: Option<usize>) -> Result<InferenceBench>
where
    Q: IntoIterator<Item = &'a [f64]>,
{
    let k = k.unwrap_or(index.config.k);
    let mut records = Vec::new();
    let (mut exact_ns, mut active_ns) = (Vec::new(), Vec::new());
    let mut agree = 0usize;
    for (q, x) in queries.into_iter().enumerate() {
        let start = Instant::now();
        let exact = head.predict_exact(x)?;
        let t_exact = start.elapsed().as_nanos() as u64;
        let start = Instant::now();
        let active = index.query_active(head, x, Some(k))?;
        let t_active = start.elapsed().as_nanos() as u64;
        agree += (exact.class == active.class) as usize;
        exact_ns.push(t_exact);
        active_ns.push(t_active);
        records.push(QueryRecord {
            query: q,
            path: InferencePath::Exact,
            nanos: t_exact,
            argmax: exact.class,
        });
        records.push(QueryRecord {
            query: q,
            path: InferencePath::Active,
            nanos: t_active,
            argmax: active.class,
        });
    }
    let exact = LatencySummary::from_nanos(&exact_ns);
    let active = LatencySummary::from_nanos(&active_ns);
    let count = exact_ns.len().max(1) as f64;
    Ok(InferenceBench {
        speedup_median: exact.median_nanos as f64 / active.median_nanos.max(1) as f64,
        speedup_mean: exact.mean_nanos / active.mean_nanos.max(1.0),
        agreement: agree as f64 / count,
        exact,
        active,
        records,
        k,
    })
}

//! Distance kernels, top-k selection and the exact brute-force oracle.
//!
//! Scores follow the metric's natural orientation: squared Euclidean distance
//! for [`Metric::L2`] (smaller is closer) and the raw dot product for
//! [`Metric::InnerProduct`] (larger is closer). Everything that ranks results
//! goes through [`Metric::compare`], with ties broken by ascending id.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::VectorStore;

/// External identifier of an indexed vector.
pub type VectorId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Squared Euclidean distance.
    #[default]
    L2,
    /// Dot product, larger is closer.
    InnerProduct,
}

impl Metric {
    #[inline]
    pub fn score(self, a: &[f32], b: &[f32]) -> f32 {
        match self {
            Metric::L2 => l2_sq(a, b),
            Metric::InnerProduct => dot(a, b),
        }
    }

    /// Maps a score onto an ascending "badness" scale.
    #[inline]
    fn badness(self, score: f32) -> f32 {
        match self {
            Metric::L2 => score,
            Metric::InnerProduct => -score,
        }
    }

    /// `Less` when `a` is the closer score.
    #[inline]
    pub fn compare(self, a: f32, b: f32) -> Ordering {
        self.badness(a).total_cmp(&self.badness(b))
    }

    #[inline]
    pub fn is_closer(self, a: f32, b: f32) -> bool {
        self.compare(a, b) == Ordering::Less
    }

    /// Compares two (score, id) pairs, closer first and lower id on ties.
    #[inline]
    pub fn compare_ranked(self, a: (f32, VectorId), b: (f32, VectorId)) -> Ordering {
        self.compare(a.0, b.0).then(a.1.cmp(&b.1))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L2 => "l2",
            Metric::InnerProduct => "inner_product",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "euclidean" => Ok(Metric::L2),
            "ip" | "inner_product" | "dot" => Ok(Metric::InnerProduct),
            other => Err(Error::invalid(format!("unknown metric '{other}'"))),
        }
    }
}

/// Squared Euclidean distance.
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let x = &a[c * 8..c * 8 + 8];
        let y = &b[c * 8..c * 8 + 8];
        for i in 0..8 {
            let d = x[i] - y[i];
            acc[i] += d * d;
        }
    }
    let mut sum = acc.iter().sum::<f32>();
    for i in chunks * 8..a.len() {
        let d = a[i] - b[i];
        sum += d * d;
    }
    sum
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let x = &a[c * 8..c * 8 + 8];
        let y = &b[c * 8..c * 8 + 8];
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut sum = acc.iter().sum::<f32>();
    for i in chunks * 8..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

#[inline]
pub fn norm_sq(a: &[f32]) -> f32 {
    dot(a, a)
}

/// Scores `query` against every row of the row-major `block`.
///
/// L2 scores are squared distances; take the square root where a true
/// radius is needed.
pub fn distance_batch(query: &[f32], block: &[f32], metric: Metric) -> Result<Vec<f32>> {
    let dim = query.len();
    if dim == 0 {
        return Err(Error::invalid("query has dimension 0"));
    }
    if !block.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: block.len() % dim,
        });
    }
    Ok(block
        .chunks_exact(dim)
        .map(|row| metric.score(query, row))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: VectorId,
    pub score: f32,
}

/// Heap entry ordered worst-first so the max-heap top is the eviction candidate.
#[derive(Debug, Clone, Copy)]
struct Ranked {
    badness: f32,
    id: VectorId,
    score: f32,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.badness
            .total_cmp(&other.badness)
            .then(self.id.cmp(&other.id))
    }
}

/// Bounded buffer keeping the `k` best entries seen so far.
///
/// The retained set depends only on the multiset of pushed entries, never on
/// their order, because ranking is a strict total order on (score, id).
#[derive(Debug, Clone)]
pub struct TopKBuffer {
    k: usize,
    metric: Metric,
    heap: BinaryHeap<Ranked>,
}

impl TopKBuffer {
    pub fn new(k: usize, metric: Metric) -> Self {
        Self {
            k,
            metric,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.k
    }

    /// Score of the current k-th entry, once the buffer is full.
    pub fn kth_score(&self) -> Option<f32> {
        if self.is_full() && self.k > 0 {
            self.heap.peek().map(|r| r.score)
        } else {
            None
        }
    }

    /// Returns true if the entry was retained.
    #[inline]
    pub fn push(&mut self, id: VectorId, score: f32) -> bool {
        if self.k == 0 {
            return false;
        }
        let entry = Ranked {
            badness: self.metric.badness(score),
            id,
            score,
        };
        if self.heap.len() < self.k {
            self.heap.push(entry);
            return true;
        }
        let mut top = self.heap.peek_mut().expect("full heap is nonempty");
        if entry < *top {
            *top = entry;
            true
        } else {
            false
        }
    }

    /// Adds aligned `(ids, scores)`; empty input is a no-op.
    pub fn update(&mut self, ids: &[VectorId], scores: &[f32]) -> Result<()> {
        if ids.len() != scores.len() {
            return Err(Error::invalid(format!(
                "{} ids but {} scores",
                ids.len(),
                scores.len()
            )));
        }
        for (&id, &score) in ids.iter().zip(scores) {
            self.push(id, score);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &TopKBuffer) {
        for r in other.heap.iter() {
            self.push(r.id, r.score);
        }
    }

    /// Scores and pushes every row of a partition block without allocating.
    #[inline]
    pub fn scan(&mut self, query: &[f32], ids: &[VectorId], block: &[f32]) {
        let dim = query.len();
        debug_assert_eq!(ids.len() * dim, block.len());
        for (row, &id) in block.chunks_exact(dim).zip(ids) {
            let score = self.metric.score(query, row);
            if self.heap.len() >= self.k {
                if let Some(top) = self.heap.peek() {
                    let b = self.metric.badness(score);
                    if b > top.badness || (b == top.badness && id > top.id) {
                        continue;
                    }
                }
            }
            self.push(id, score);
        }
    }

    /// Entries sorted best-first.
    pub fn entries(&self) -> Vec<Neighbor> {
        let mut v: Vec<Ranked> = self.heap.iter().copied().collect();
        v.sort_unstable();
        v.into_iter()
            .map(|r| Neighbor {
                id: r.id,
                score: r.score,
            })
            .collect()
    }

    pub fn to_result(&self) -> KnnResult {
        let entries = self.entries();
        KnnResult {
            ids: entries.iter().map(|n| n.id).collect(),
            scores: entries.iter().map(|n| n.score).collect(),
        }
    }
}

/// Functional form of [`TopKBuffer::update`].
pub fn topk_update(mut buf: TopKBuffer, ids: &[VectorId], scores: &[f32]) -> Result<TopKBuffer> {
    buf.update(ids, scores)?;
    Ok(buf)
}

/// A ranked answer list, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnnResult {
    pub ids: Vec<VectorId>,
    pub scores: Vec<f32>,
}

impl KnnResult {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Exact k nearest neighbors of each row of `queries` (row-major).
///
/// When `k` exceeds the store size every vector is returned.
pub fn brute_force_knn(
    queries: &[f32],
    store: &VectorStore,
    k: usize,
    metric: Metric,
) -> Result<Vec<KnnResult>> {
    let dim = store.dim();
    if store.is_empty() {
        return Err(Error::invalid("brute force over an empty store"));
    }
    if !queries.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: queries.len() % dim,
        });
    }
    Ok(queries
        .chunks_exact(dim)
        .map(|q| {
            let mut buf = TopKBuffer::new(k, metric);
            buf.scan(q, store.ids(), store.data());
            buf.to_result()
        })
        .collect())
}

/// |ids(result) ∩ ids(truth)| / |truth|.
pub fn recall_at_k(result: &KnnResult, truth: &KnnResult) -> f64 {
    if truth.ids.is_empty() {
        return 1.0;
    }
    let truth_ids: HashSet<VectorId> = truth.ids.iter().copied().collect();
    let found: HashSet<VectorId> = result
        .ids
        .iter()
        .copied()
        .filter(|id| truth_ids.contains(id))
        .collect();
    found.len() as f64 / truth_ids.len() as f64
}

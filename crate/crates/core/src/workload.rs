//! Synthetic workloads: generation, trace files and replay.
//!
//! A trace is line-delimited JSON. The first line is a header with the
//! dimension, metric, seed and the generating spec. `load` records carry
//! the initial dataset, followed by `query`, `insert`, `delete` and
//! `maintain` records in execution order. Every vector is stored inline so
//! a trace replays without the dataset it came from.

use std::collections::{HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, KMeansConfig};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::kernels::{brute_force_knn, l2_sq, recall_at_k, Metric, VectorId};
use crate::maintenance::{ActionRecord, Decision};
use crate::store::VectorStore;

const TRACE_FORMAT: &str = "aivf-trace";
const TRACE_VERSION: u32 = 1;
const LOAD_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    /// Vectors resident before the first operation.
    pub initial_size: usize,
    /// Operations, not counting scheduled maintenance.
    pub operations: usize,
    /// Vectors per insert or delete operation.
    pub vectors_per_op: usize,
    /// Queries per query operation.
    pub queries_per_op: usize,
    pub query_fraction: f64,
    pub insert_fraction: f64,
    pub delete_fraction: f64,
    /// Clusters used to place hot spots.
    pub clusters: usize,
    /// Zipf exponent over clusters; 0 is uniform.
    pub skew: f64,
    /// Queries are a random member of a hot cluster plus Gaussian noise
    /// with this multiple of the cluster's per-dimension spread.
    pub query_noise: f64,
    /// Keep at most this many live vectors by deleting the oldest after
    /// each insert.
    pub sliding_window: Option<usize>,
    /// Schedule maintenance after this many operations; 0 never.
    pub maintain_every: usize,
    pub seed: u64,
    pub k: usize,
    pub recall_target: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            initial_size: 10_000,
            operations: 100,
            vectors_per_op: 1000,
            queries_per_op: 100,
            query_fraction: 0.1,
            insert_fraction: 0.9,
            delete_fraction: 0.0,
            clusters: 100,
            skew: 1.0,
            query_noise: 0.1,
            sliding_window: None,
            maintain_every: 1,
            seed: 42,
            k: 100,
            recall_target: 0.9,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [
            self.query_fraction,
            self.insert_fraction,
            self.delete_fraction,
        ];
        if fr.iter().any(|f| !(*f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "operation mix must be non-negative and sum to 1, got {fr:?}"
            )));
        }
        if !(self.skew >= 0.0) || !(self.query_noise >= 0.0) {
            return Err(Error::invalid("skew and query noise must be non-negative"));
        }
        if self.clusters == 0 || self.k == 0 {
            return Err(Error::invalid("clusters and k must be positive"));
        }
        if self.vectors_per_op == 0 || self.queries_per_op == 0 {
            return Err(Error::invalid("operations must carry at least one vector"));
        }
        if self.sliding_window == Some(0) {
            return Err(Error::invalid("sliding window must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Query,
    Insert,
    Delete,
    Maintain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Operation {
    Query {
        vectors: Vec<Vec<f32>>,
        /// Cluster each query was drawn from.
        #[serde(default)]
        clusters: Vec<usize>,
    },
    Insert {
        ids: Vec<VectorId>,
        vectors: Vec<Vec<f32>>,
    },
    Delete {
        ids: Vec<VectorId>,
    },
    Maintain,
}

impl Operation {
    pub fn kind(&self) -> OpKind {
        match self {
            Operation::Query { .. } => OpKind::Query,
            Operation::Insert { .. } => OpKind::Insert,
            Operation::Delete { .. } => OpKind::Delete,
            Operation::Maintain => OpKind::Maintain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub metric: Metric,
    pub seed: u64,
    pub spec: WorkloadSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub initial: VectorStore,
    pub ops: Vec<Operation>,
}

impl Trace {
    pub fn count(&self, kind: OpKind) -> usize {
        self.ops.iter().filter(|o| o.kind() == kind).count()
    }

    /// Ids live after every operation, by set algebra over the trace.
    pub fn final_live_ids(&self) -> HashSet<VectorId> {
        let mut live: HashSet<VectorId> = self.initial.ids().iter().copied().collect();
        for op in &self.ops {
            match op {
                Operation::Insert { ids, .. } => live.extend(ids),
                Operation::Delete { ids } => {
                    for id in ids {
                        live.remove(id);
                    }
                }
                _ => {}
            }
        }
        live
    }
}

/// Exact per-kind counts spread evenly over `n` slots.
fn schedule(n: usize, fractions: [f64; 3]) -> Vec<OpKind> {
    let kinds = [OpKind::Query, OpKind::Insert, OpKind::Delete];
    let mut targets: Vec<usize> = fractions
        .iter()
        .map(|f| (f * n as f64).floor() as usize)
        .collect();
    // Hand leftover slots to the largest remainders.
    let mut rest: Vec<(f64, usize)> = fractions
        .iter()
        .enumerate()
        .map(|(i, f)| (f * n as f64 - targets[i] as f64, i))
        .collect();
    rest.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = n - targets.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(missing) {
        targets[i] += 1;
    }
    let mut done = [0usize; 3];
    (0..n)
        .map(|slot| {
            let i = (0..3)
                .filter(|&i| done[i] < targets[i])
                .max_by(|&a, &b| {
                    let lag = |i: usize| {
                        targets[i] as f64 * (slot + 1) as f64 / n as f64 - done[i] as f64
                    };
                    lag(a).total_cmp(&lag(b)).then(b.cmp(&a))
                })
                .expect("a kind with remaining slots");
            done[i] += 1;
            kinds[i]
        })
        .collect()
}

struct Hotspots {
    /// Dataset rows of each cluster.
    members: Vec<Vec<usize>>,
    spread: Vec<f32>,
    /// Cluster for each Zipf rank.
    by_rank: Vec<usize>,
    zipf: Zipf<f64>,
}

impl Hotspots {
    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let rank = self.zipf.sample(rng) as usize;
        self.by_rank[rank.clamp(1, self.by_rank.len()) - 1]
    }
}

/// Generates a deterministic trace from `dataset`.
pub fn generate_trace(dataset: &VectorStore, metric: Metric, spec: &WorkloadSpec) -> Result<Trace> {
    spec.validate()?;
    let n = dataset.len();
    let dim = dataset.dim();
    if spec.initial_size > n || spec.clusters > n {
        return Err(Error::invalid(format!(
            "dataset has {n} vectors, spec needs {} initial and {} clusters",
            spec.initial_size, spec.clusters
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let clustering = kmeans(
        dataset.data(),
        dim,
        &KMeansConfig {
            n_clusters: spec.clusters,
            n_iters: 5,
            seed: spec.seed,
            metric: Metric::L2,
        },
    )?;
    let n_clusters = clustering.n_clusters();
    let centers: Vec<Vec<f32>> = (0..n_clusters)
        .map(|c| clustering.centroid(c).to_vec())
        .collect();
    let mut sq = vec![0.0f64; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (r, &c) in clustering.assignments.iter().enumerate() {
        sq[c] += l2_sq(dataset.row(r), &centers[c]) as f64;
        counts[c] += 1;
    }
    let spread: Vec<f32> = sq
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c == 0 {
                0.0
            } else {
                (s / (c * dim) as f64).sqrt() as f32
            }
        })
        .collect();
    let mut members = vec![Vec::new(); n_clusters];
    for (r, &c) in clustering.assignments.iter().enumerate() {
        members[c].push(r);
    }
    let mut by_rank: Vec<usize> = (0..n_clusters).filter(|&c| counts[c] > 0).collect();
    by_rank.shuffle(&mut rng);
    let zipf = Zipf::new(by_rank.len() as f64, spec.skew)
        .map_err(|e| Error::invalid(format!("zipf: {e}")))?;
    let hot = Hotspots {
        members,
        spread,
        by_rank,
        zipf,
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (initial_rows, pending_rows) = order.split_at(spec.initial_size);
    let mut initial_rows = initial_rows.to_vec();
    initial_rows.sort_unstable();
    let mut initial = VectorStore::new(dim);
    for &r in &initial_rows {
        initial.push(dataset.ids()[r], dataset.row(r))?;
    }
    let mut pending: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for &r in pending_rows.iter().rev() {
        pending[clustering.assignments[r]].push(r);
    }
    let mut pending_left = pending_rows.len();

    let mut live: VecDeque<VectorId> = initial.ids().iter().copied().collect();
    let mut live_set: HashSet<VectorId> = live.iter().copied().collect();
    let mut ops = Vec::new();
    let mix = [
        spec.query_fraction,
        spec.insert_fraction,
        spec.delete_fraction,
    ];
    for (i, kind) in schedule(spec.operations, mix).into_iter().enumerate() {
        match kind {
            OpKind::Query => {
                let mut vectors = Vec::with_capacity(spec.queries_per_op);
                let mut clusters = Vec::with_capacity(spec.queries_per_op);
                for _ in 0..spec.queries_per_op {
                    let c = hot.draw(&mut rng);
                    let sigma = (spec.query_noise as f32 * hot.spread[c]).max(f32::MIN_POSITIVE);
                    let noise = Normal::new(0.0f32, sigma)
                        .map_err(|e| Error::invalid(format!("noise: {e}")))?;
                    let anchor = *hot.members[c].choose(&mut rng).expect("nonempty cluster");
                    vectors.push(
                        dataset
                            .row(anchor)
                            .iter()
                            .map(|x| x + noise.sample(&mut rng))
                            .collect(),
                    );
                    clusters.push(c);
                }
                ops.push(Operation::Query { vectors, clusters });
            }
            OpKind::Insert => {
                if pending_left < spec.vectors_per_op {
                    return Err(Error::invalid(format!(
                        "insert {i} needs {} vectors, only {pending_left} left in the dataset",
                        spec.vectors_per_op
                    )));
                }
                let mut ids = Vec::with_capacity(spec.vectors_per_op);
                let mut vectors = Vec::with_capacity(spec.vectors_per_op);
                for _ in 0..spec.vectors_per_op {
                    let c = hot.draw(&mut rng);
                    let c = if pending[c].is_empty() {
                        *hot.by_rank
                            .iter()
                            .find(|&&c| !pending[c].is_empty())
                            .expect("pending vectors")
                    } else {
                        c
                    };
                    let r = pending[c].pop().expect("nonempty cluster");
                    pending_left -= 1;
                    let id = dataset.ids()[r];
                    ids.push(id);
                    vectors.push(dataset.row(r).to_vec());
                    live.push_back(id);
                    live_set.insert(id);
                }
                ops.push(Operation::Insert { ids, vectors });
                if let Some(w) = spec.sliding_window {
                    let mut evicted = Vec::new();
                    while live_set.len() > w {
                        let id = live.pop_front().expect("live vector");
                        if live_set.remove(&id) {
                            evicted.push(id);
                        }
                    }
                    if !evicted.is_empty() {
                        ops.push(Operation::Delete { ids: evicted });
                    }
                }
            }
            OpKind::Delete => {
                if live_set.len() < spec.vectors_per_op {
                    return Err(Error::invalid(format!(
                        "delete {i} needs {} live vectors, only {} remain",
                        spec.vectors_per_op,
                        live_set.len()
                    )));
                }
                live.retain(|id| live_set.contains(id));
                let picks = rand::seq::index::sample(&mut rng, live.len(), spec.vectors_per_op);
                let ids: Vec<VectorId> = picks.into_iter().map(|p| live[p]).collect();
                for id in &ids {
                    live_set.remove(id);
                }
                ops.push(Operation::Delete { ids });
            }
            OpKind::Maintain => unreachable!("maintenance is scheduled separately"),
        }
        if spec.maintain_every > 0 && (i + 1) % spec.maintain_every == 0 {
            ops.push(Operation::Maintain);
        }
    }
    Ok(Trace {
        header: TraceHeader {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            dim,
            metric,
            seed: spec.seed,
            spec: spec.clone(),
        },
        initial,
        ops,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Record {
    Load {
        ids: Vec<VectorId>,
        vectors: Vec<Vec<f32>>,
    },
    #[serde(untagged)]
    Op(Operation),
}

fn json_err(e: serde_json::Error) -> Error {
    Error::invalid(format!("cannot encode trace: {e}"))
}

pub fn write_trace_to<W: Write>(mut w: W, trace: &Trace) -> Result<()> {
    serde_json::to_writer(&mut w, &trace.header).map_err(json_err)?;
    w.write_all(b"\n")?;
    let ids = trace.initial.ids();
    for start in (0..ids.len()).step_by(LOAD_CHUNK) {
        let end = (start + LOAD_CHUNK).min(ids.len());
        let rec = Record::Load {
            ids: ids[start..end].to_vec(),
            vectors: (start..end)
                .map(|r| trace.initial.row(r).to_vec())
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(json_err)?;
        w.write_all(b"\n")?;
    }
    for op in &trace.ops {
        serde_json::to_writer(&mut w, op).map_err(json_err)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn check_dims(vectors: &[Vec<f32>], dim: usize, line: usize) -> Result<()> {
    match vectors.iter().find(|v| v.len() != dim) {
        Some(v) => Err(Error::parse(
            format!("line {line}"),
            format!(
                "vector of dimension {} in a {dim}-dimensional trace",
                v.len()
            ),
        )),
        None => Ok(()),
    }
}

pub fn read_trace_from<R: Read>(r: R) -> Result<Trace> {
    let mut lines = BufReader::new(r).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::parse("line 1", "empty trace file"))??;
    let header: TraceHeader = serde_json::from_str(&first)
        .map_err(|e| Error::parse(format!("line 1, column {}", e.column()), e.to_string()))?;
    if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
        return Err(Error::parse(
            "line 1",
            format!(
                "unsupported trace format {} v{}",
                header.format, header.version
            ),
        ));
    }
    let dim = header.dim;
    let mut initial = VectorStore::new(dim);
    let mut ops = Vec::new();
    for (i, line) in lines.enumerate() {
        let no = i + 2;
        let line = line?;
        let rec: Record = serde_json::from_str(&line).map_err(|e| {
            Error::parse(format!("line {no}, column {}", e.column()), e.to_string())
        })?;
        match rec {
            Record::Load { ids, vectors } => {
                if !ops.is_empty() {
                    return Err(Error::parse(
                        format!("line {no}"),
                        "load record after operations",
                    ));
                }
                if ids.len() != vectors.len() {
                    return Err(Error::parse(
                        format!("line {no}"),
                        "ids and vectors differ in length",
                    ));
                }
                check_dims(&vectors, dim, no)?;
                for (id, v) in ids.into_iter().zip(&vectors) {
                    initial
                        .push(id, v)
                        .map_err(|e| Error::parse(format!("line {no}"), e.to_string()))?;
                }
            }
            Record::Op(op) => {
                match &op {
                    Operation::Query { vectors, .. } => check_dims(vectors, dim, no)?,
                    Operation::Insert { ids, vectors } => {
                        if ids.len() != vectors.len() {
                            return Err(Error::parse(
                                format!("line {no}"),
                                "ids and vectors differ in length",
                            ));
                        }
                        check_dims(vectors, dim, no)?;
                    }
                    _ => {}
                }
                ops.push(op);
            }
        }
    }
    Ok(Trace {
        header,
        initial,
        ops,
    })
}

pub fn write_trace(path: impl AsRef<Path>, trace: &Trace) -> Result<()> {
    write_trace_to(BufWriter::new(File::create(path)?), trace)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace> {
    read_trace_from(File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    /// Run `maintain` records; when false they are skipped.
    pub maintenance: bool,
    /// Evaluate recall on every query up to this many live vectors...
    pub full_recall_limit: usize,
    /// ...and on every n-th query beyond it.
    pub recall_stride: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            maintenance: true,
            full_recall_limit: 100_000,
            recall_stride: 10,
        }
    }
}

/// One row of replay output: a single query, or one whole update or
/// maintenance operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpMetric {
    pub seq: usize,
    /// Index of the trace operation this row belongs to.
    pub op: usize,
    pub kind: OpKind,
    pub vectors: usize,
    pub seconds: f64,
    pub recall: Option<f64>,
    pub nprobe: Option<usize>,
    pub partitions: usize,
    pub live: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub queries: usize,
    pub inserted: usize,
    pub deleted: usize,
    pub maintenance_runs: usize,
    pub committed_actions: usize,
    pub rejected_actions: usize,
    pub search_seconds: f64,
    pub update_seconds: f64,
    pub maintenance_seconds: f64,
    pub total_seconds: f64,
    pub mean_query_seconds: f64,
    pub recall_samples: usize,
    pub mean_recall: f64,
    pub recall_std: f64,
    pub mean_nprobe: f64,
    pub final_partitions: usize,
    pub final_live: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<OpMetric>,
    pub actions: Vec<ActionRecord>,
    pub seed: u64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl RunMetrics {
    fn seconds(&self, kinds: &[OpKind]) -> f64 {
        self.rows
            .iter()
            .filter(|r| kinds.contains(&r.kind))
            .map(|r| r.seconds)
            .sum()
    }

    pub fn query_rows(&self) -> impl Iterator<Item = &OpMetric> {
        self.rows.iter().filter(|r| r.kind == OpKind::Query)
    }

    pub fn query_latencies(&self) -> Vec<f64> {
        self.query_rows().map(|r| r.seconds).collect()
    }

    pub fn recalls(&self) -> Vec<f64> {
        self.query_rows().filter_map(|r| r.recall).collect()
    }

    pub fn summary(&self) -> RunSummary {
        let count = |k: OpKind| -> usize {
            self.rows
                .iter()
                .filter(|r| r.kind == k)
                .map(|r| r.vectors)
                .sum()
        };
        let search = self.seconds(&[OpKind::Query]);
        let update = self.seconds(&[OpKind::Insert, OpKind::Delete]);
        let maint = self.seconds(&[OpKind::Maintain]);
        let queries = count(OpKind::Query);
        let recalls = self.recalls();
        let (mean_recall, recall_std) = mean_std(&recalls);
        let nprobes: Vec<f64> = self
            .query_rows()
            .filter_map(|r| r.nprobe)
            .map(|n| n as f64)
            .collect();
        let committed = self
            .actions
            .iter()
            .filter(|a| a.decision == Decision::Commit)
            .count();
        RunSummary {
            seed: self.seed,
            queries,
            inserted: count(OpKind::Insert),
            deleted: count(OpKind::Delete),
            maintenance_runs: self
                .rows
                .iter()
                .filter(|r| r.kind == OpKind::Maintain)
                .count(),
            committed_actions: committed,
            rejected_actions: self.actions.len() - committed,
            search_seconds: search,
            update_seconds: update,
            maintenance_seconds: maint,
            total_seconds: search + update + maint,
            mean_query_seconds: if queries == 0 {
                0.0
            } else {
                search / queries as f64
            },
            recall_samples: recalls.len(),
            mean_recall,
            recall_std,
            mean_nprobe: mean_std(&nprobes).0,
            final_partitions: self.rows.last().map_or(0, |r| r.partitions),
            final_live: self.rows.last().map_or(0, |r| r.live),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)
                .map_err(|e| Error::invalid(format!("cannot write metrics row: {e}")))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Replays `trace` against `engine`, keeping a brute-force oracle of the
/// live set for recall.
pub fn replay(trace: &Trace, engine: &mut Engine, config: &ReplayConfig) -> Result<RunMetrics> {
    let index = engine.index();
    if trace.header.dim != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            got: trace.header.dim,
        });
    }
    if trace.header.metric != index.metric() || engine.len() != trace.initial.len() {
        return Err(Error::invalid(
            "engine must be built on the trace's initial dataset with the trace's metric",
        ));
    }
    let metric = index.metric();
    let k = engine.config().aps.k;
    let stride = config.recall_stride.max(1);
    let mut live = trace.initial.clone();
    let mut metrics = RunMetrics {
        seed: trace.header.seed,
        ..Default::default()
    };
    let mut query_no = 0usize;

    for (op_no, op) in trace.ops.iter().enumerate() {
        let mut row =
            |kind, vectors, seconds, recall, nprobe, engine: &Engine, live: &VectorStore| {
                metrics.rows.push(OpMetric {
                    seq: metrics.rows.len(),
                    op: op_no,
                    kind,
                    vectors,
                    seconds,
                    recall,
                    nprobe,
                    partitions: engine.index().partition_count(0),
                    live: live.len(),
                })
            };
        match op {
            Operation::Query { vectors, .. } => {
                for q in vectors {
                    let start = Instant::now();
                    let hit = engine.search(q)?;
                    let seconds = start.elapsed().as_secs_f64();
                    let sample =
                        live.len() <= config.full_recall_limit || query_no.is_multiple_of(stride);
                    query_no += 1;
                    let recall = if sample && !live.is_empty() {
                        let truth = brute_force_knn(q, &live, k, metric)?;
                        Some(recall_at_k(&hit.result, &truth[0]))
                    } else {
                        None
                    };
                    row(
                        OpKind::Query,
                        1,
                        seconds,
                        recall,
                        Some(hit.nprobe),
                        engine,
                        &live,
                    );
                }
            }
            Operation::Insert { ids, vectors } => {
                let start = Instant::now();
                for (id, v) in ids.iter().zip(vectors) {
                    engine.insert(*id, v)?;
                }
                let seconds = start.elapsed().as_secs_f64();
                for (id, v) in ids.iter().zip(vectors) {
                    live.push(*id, v)?;
                }
                row(
                    OpKind::Insert,
                    ids.len(),
                    seconds,
                    None,
                    None,
                    engine,
                    &live,
                );
            }
            Operation::Delete { ids } => {
                let start = Instant::now();
                let mut missing = None;
                for id in ids {
                    if !engine.delete(*id) {
                        missing.get_or_insert(*id);
                    }
                }
                let seconds = start.elapsed().as_secs_f64();
                if let Some(id) = missing {
                    return Err(Error::InvalidState(format!(
                        "trace operation {op_no} deletes unknown id {id}"
                    )));
                }
                for id in ids {
                    live.remove(*id);
                }
                row(
                    OpKind::Delete,
                    ids.len(),
                    seconds,
                    None,
                    None,
                    engine,
                    &live,
                );
            }
            Operation::Maintain => {
                if !config.maintenance {
                    continue;
                }
                let start = Instant::now();
                let actions = engine.maintain()?;
                let seconds = start.elapsed().as_secs_f64();
                metrics.actions.extend(actions);
                row(OpKind::Maintain, 0, seconds, None, None, engine, &live);
            }
        }
    }
    Ok(metrics)
}

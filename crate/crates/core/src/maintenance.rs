//! Cost model and the estimate, verify, commit maintenance pass.
//!
//! The modeled query cost is `C = sum over partitions of A * lambda(s)`:
//! access frequency times the profiled time to scan `s` vectors. Each
//! candidate split or merge gets a cheap estimated cost change from
//! assumptions about the outcome; qualifying actions are applied
//! tentatively, re-scored with the sizes they actually produced, and kept
//! only if the verified change still beats `-tau`.
//!
//! Overhead terms charge the parent partition, whose size changes by one
//! centroid row: `A_parent * (lambda(s_parent +- 1) - lambda(s_parent))`.
//! The root is scanned by every query, so for a flat index this is
//! `lambda(N +- 1) - lambda(N)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{refine_partitions, split_partition, SplitOutcome};
use crate::error::{Error, Result};
use crate::index::{MultiLevelIndex, PartitionId};
use crate::kernels::{l2_sq, Metric, TopKBuffer};
use crate::stats::PartitionStats;

/// Scan latency `lambda(s)` in seconds, piecewise linear over a size grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    sizes: Vec<f64>,
    seconds: Vec<f64>,
}

/// Pool-adjacent-violators: the closest non-decreasing sequence in L2.
fn isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let n = na + nb;
            *blocks.last_mut().unwrap() = ((a * na as f64 + b * nb as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, n)| std::iter::repeat_n(v, n))
        .collect()
}

impl LatencyProfile {
    /// Builds a profile from a strictly increasing size grid, forcing the
    /// latencies to be non-decreasing.
    pub fn new(sizes: Vec<f64>, seconds: Vec<f64>) -> Result<Self> {
        if sizes.len() != seconds.len() || sizes.len() < 2 {
            return Err(Error::invalid(
                "latency profile needs at least two (size, seconds) points",
            ));
        }
        if sizes.windows(2).any(|w| !(w[0] < w[1])) || sizes[0] < 0.0 {
            return Err(Error::invalid(
                "profile sizes must be non-negative and increasing",
            ));
        }
        if seconds.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("profile latencies must be finite"));
        }
        Ok(Self {
            sizes,
            seconds: isotonic(&seconds),
        })
    }

    /// `lambda(s) = intercept + slope * s` sampled on `[0, max_size]`.
    pub fn linear(intercept: f64, slope: f64, max_size: f64) -> Self {
        Self::new(
            vec![0.0, max_size.max(1.0)],
            vec![intercept, intercept + slope * max_size.max(1.0)],
        )
        .expect("valid linear profile")
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn seconds(&self) -> &[f64] {
        &self.seconds
    }

    /// Interpolates inside the grid, extends the end segments linearly
    /// outside it, and clamps at zero.
    pub fn eval(&self, s: f64) -> f64 {
        let n = self.sizes.len();
        let seg = match self.sizes.partition_point(|&x| x <= s) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let (x0, x1) = (self.sizes[seg], self.sizes[seg + 1]);
        let (y0, y1) = (self.seconds[seg], self.seconds[seg + 1]);
        (y0 + (y1 - y0) * (s - x0) / (x1 - x0)).max(0.0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::invalid(format!("cannot encode profile: {e}")))?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw: Self =
            serde_json::from_reader(BufReader::new(File::open(path)?)).map_err(|e| {
                Error::parse(
                    format!("line {}, column {}", e.line(), e.column()),
                    e.to_string(),
                )
            })?;
        Self::new(raw.sizes, raw.seconds)
    }
}

/// Times a top-k scan of random blocks at each grid size, taking the median
/// over `repetitions`.
///
/// Each scan starts from a buffer already holding the best `k` of a separate
/// warm-up block, as a partition scanned mid-query would. Small sizes are
/// timed in batches so the clock resolution does not dominate.
pub fn profile_scan_latency(
    dim: usize,
    metric: Metric,
    grid: &[usize],
    repetitions: usize,
    k: usize,
    seed: u64,
) -> Result<LatencyProfile> {
    if dim == 0 || grid.len() < 2 || repetitions == 0 || k == 0 {
        return Err(Error::invalid(
            "profiling needs a dimension, two grid sizes, repetitions and k",
        ));
    }
    const BATCH_ROWS: usize = 1 << 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = *grid.iter().max().unwrap();
    let warm_rows = (64 * k).max(4096);
    let rows = max + warm_rows;
    let data: Vec<f32> = (0..rows * dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let ids: Vec<u64> = (0..rows as u64).collect();
    let query: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut warm = TopKBuffer::new(k, metric);
    warm.scan(&query, &ids[max..], &data[max * dim..]);

    let mut seconds = Vec::with_capacity(grid.len());
    for &s in grid {
        let batch = BATCH_ROWS.div_ceil(s.max(1));
        let mut times: Vec<f64> = (0..repetitions)
            .map(|_| {
                let mut bufs = vec![warm.clone(); batch];
                let start = Instant::now();
                for buf in bufs.iter_mut() {
                    buf.scan(&query, &ids[..s], &data[..s * dim]);
                }
                let elapsed = start.elapsed().as_secs_f64();
                std::hint::black_box(&bufs);
                elapsed / batch as f64
            })
            .collect();
        times.sort_by(f64::total_cmp);
        seconds.push(times[times.len() / 2]);
    }
    LatencyProfile::new(grid.iter().map(|&s| s as f64).collect(), seconds)
}

/// Modeled cost `sum A * lambda(s)` over every partition at every level.
pub fn total_cost(
    index: &MultiLevelIndex,
    stats: &PartitionStats,
    profile: &LatencyProfile,
) -> f64 {
    (0..=index.root_level())
        .flat_map(|l| index.partitions(l).map(move |(pid, p)| (l, pid, p.len())))
        .map(|(l, pid, s)| {
            let a = stats.frequency(l, pid);
            if a == 0.0 {
                0.0
            } else {
                a * profile.eval(s as f64)
            }
        })
        .sum()
}

/// Estimated split change assuming two equal halves that each keep
/// `alpha * A`.
pub fn split_delta_estimate(
    overhead: f64,
    a: f64,
    s: usize,
    alpha: f64,
    profile: &LatencyProfile,
) -> f64 {
    let s = s as f64;
    overhead - a * profile.eval(s) + 2.0 * alpha * a * profile.eval(s / 2.0)
}

/// Split change for the child sizes a split actually produced.
pub fn split_delta_verified(
    overhead: f64,
    a: f64,
    s: usize,
    left: usize,
    right: usize,
    alpha: f64,
    profile: &LatencyProfile,
) -> Result<f64> {
    if left + right != s || left == 0 || right == 0 {
        return Err(Error::invalid(format!(
            "split children {left} + {right} must be nonempty and sum to {s}"
        )));
    }
    Ok(overhead - a * profile.eval(s as f64)
        + alpha * a * (profile.eval(left as f64) + profile.eval(right as f64)))
}

/// Estimated merge change, spreading the partition's size and frequency
/// evenly across `receivers` given as `(A_m, s_m)`.
pub fn merge_delta_estimate(
    overhead: f64,
    a: f64,
    s: usize,
    receivers: &[(f64, usize)],
    profile: &LatencyProfile,
) -> f64 {
    let r = receivers.len().max(1) as f64;
    let (ds, da) = (s as f64 / r, a / r);
    overhead - a * profile.eval(s as f64)
        + receivers
            .iter()
            .map(|&(am, sm)| {
                let sm = sm as f64;
                (am + da) * profile.eval(sm + ds) - am * profile.eval(sm)
            })
            .sum::<f64>()
}

/// Merge change for the receiver gains that actually happened, given as
/// `(A_m, s_m, gained)`. Each receiver inherits frequency in proportion to
/// the share of vectors it took.
pub fn merge_delta_verified(
    overhead: f64,
    a: f64,
    s: usize,
    receivers: &[(f64, usize, usize)],
    profile: &LatencyProfile,
) -> f64 {
    overhead - a * profile.eval(s as f64)
        + receivers
            .iter()
            .map(|&(am, sm, ds)| {
                let da = if s == 0 {
                    0.0
                } else {
                    a * ds as f64 / s as f64
                };
                (am + da) * profile.eval((sm + ds) as f64) - am * profile.eval(sm as f64)
            })
            .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaintenanceConfig {
    /// Commit threshold in seconds.
    pub tau: f64,
    /// Fraction of the parent's frequency each split child is assumed to keep.
    pub alpha: f64,
    /// Neighborhood size for refinement and merge receivers.
    pub refine_radius: usize,
    pub refine_iters: usize,
    pub refine: bool,
    /// When false, tentative actions are committed without verification.
    pub reject: bool,
    /// Merge candidates must be smaller than this fraction of the level's
    /// mean partition size.
    pub min_size_fraction: f64,
    /// Add a level when the root holds more centroids than this.
    pub add_level_threshold: usize,
    /// Remove a level when the root holds fewer centroids than this.
    pub remove_level_threshold: usize,
    /// Size-threshold baseline: split above this size.
    pub max_partition_size: Option<usize>,
    /// Size-threshold baseline: merge below this size.
    pub min_partition_size: Option<usize>,
    pub seed: u64,
}

impl Default for MaintenanceConfig {
    fn default() -> Self {
        Self {
            tau: 250e-9,
            alpha: 0.9,
            refine_radius: 50,
            refine_iters: 1,
            refine: true,
            reject: true,
            min_size_fraction: 0.1,
            add_level_threshold: 8192,
            remove_level_threshold: 128,
            max_partition_size: None,
            min_partition_size: None,
            seed: 42,
        }
    }
}

impl MaintenanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) {
            return Err(Error::invalid("tau must be non-negative"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.refine_radius == 0 {
            return Err(Error::invalid("refine radius must be positive"));
        }
        if self.remove_level_threshold >= self.add_level_threshold {
            return Err(Error::invalid(
                "remove-level threshold must be below the add-level threshold",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Split,
    Merge,
    AddLevel,
    RemoveLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Commit,
    Reject,
}

/// One audited maintenance action.
///
/// Level changes and size-threshold actions carry no deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub kind: ActionKind,
    pub level: usize,
    pub partition: Option<PartitionId>,
    pub estimated_delta: Option<f64>,
    pub verified_delta: Option<f64>,
    /// Change in [`total_cost`] between the state before the action and
    /// right after it was applied, refinement excluded.
    pub observed_delta: Option<f64>,
    pub decision: Decision,
    pub sizes_before: Vec<usize>,
    pub sizes_after: Vec<usize>,
    pub created: Vec<PartitionId>,
}

pub fn write_audit<W: Write>(mut w: W, records: &[ActionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)
            .map_err(|e| Error::invalid(format!("cannot encode action: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Splits one partition's vectors; the pass calls this for every tentative
/// split so tests can force outcomes.
pub type Splitter<'a> = dyn FnMut(&[f32], usize, u64) -> Result<SplitOutcome> + 'a;

fn overhead(
    index: &MultiLevelIndex,
    stats: &PartitionStats,
    profile: &LatencyProfile,
    level: usize,
    pid: PartitionId,
    change: i64,
) -> f64 {
    let Some(parent) = index.parent(level, pid) else {
        return 0.0;
    };
    let a = stats.frequency(level + 1, parent);
    let s = index.partition_size(level + 1, parent) as f64;
    a * (profile.eval(s + change as f64) - profile.eval(s))
}

/// Estimated split change for partition `pid` under current stats.
pub fn estimate_split_delta(
    index: &MultiLevelIndex,
    stats: &PartitionStats,
    profile: &LatencyProfile,
    level: usize,
    pid: PartitionId,
    alpha: f64,
) -> f64 {
    split_delta_estimate(
        overhead(index, stats, profile, level, pid, 1),
        stats.frequency(level, pid),
        index.partition_size(level, pid),
        alpha,
        profile,
    )
}

/// The `r` partitions nearest to `pid` by centroid, excluding `pid`.
pub fn merge_receivers(
    index: &MultiLevelIndex,
    level: usize,
    pid: PartitionId,
    r: usize,
) -> Vec<PartitionId> {
    let Some(c) = index.centroid(level, pid) else {
        return Vec::new();
    };
    let mut ranked: Vec<(f32, PartitionId)> = index
        .centroids(level)
        .into_iter()
        .filter(|(p, _)| *p != pid)
        .map(|(p, x)| (l2_sq(c, x), p))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(r).map(|x| x.1).collect()
}

/// Estimated merge change for partition `pid` into its nearest receivers.
pub fn estimate_merge_delta(
    index: &MultiLevelIndex,
    stats: &PartitionStats,
    profile: &LatencyProfile,
    level: usize,
    pid: PartitionId,
    r_f: usize,
) -> Result<f64> {
    if index.partition_count(level) < 2 {
        return Err(Error::InvalidState(
            "cannot merge the last partition of a level".into(),
        ));
    }
    let receivers: Vec<(f64, usize)> = merge_receivers(index, level, pid, r_f)
        .into_iter()
        .map(|m| (stats.frequency(level, m), index.partition_size(level, m)))
        .collect();
    Ok(merge_delta_estimate(
        overhead(index, stats, profile, level, pid, -1),
        stats.frequency(level, pid),
        index.partition_size(level, pid),
        &receivers,
        profile,
    ))
}

struct Pass<'a, 'b> {
    index: &'a mut MultiLevelIndex,
    stats: &'a mut PartitionStats,
    profile: &'a LatencyProfile,
    config: &'a MaintenanceConfig,
    splitter: &'a mut Splitter<'b>,
    rng: ChaCha8Rng,
    records: Vec<ActionRecord>,
}

impl Pass<'_, '_> {
    fn commit(&self, verified: f64) -> bool {
        !self.config.reject || verified < -self.config.tau
    }

    fn try_split(&mut self, level: usize, pid: PartitionId, estimate: f64) -> Result<()> {
        let Some(p) = self.index.partition(level, pid) else {
            return Ok(());
        };
        let s = p.len();
        let a = self.stats.frequency(level, pid);
        let vectors = p.data().to_vec();
        let dim = self.index.dim();
        let mut record = ActionRecord {
            kind: ActionKind::Split,
            level,
            partition: Some(pid),
            estimated_delta: Some(estimate),
            verified_delta: None,
            observed_delta: None,
            decision: Decision::Reject,
            sizes_before: vec![s],
            sizes_after: vec![s],
            created: Vec::new(),
        };
        let seed = self.rng.random();
        let (left, right) = match (self.splitter)(&vectors, dim, seed)? {
            SplitOutcome::Split { left, right } => (left, right),
            SplitOutcome::CannotSplit => {
                self.records.push(record);
                return Ok(());
            }
        };
        let over = overhead(self.index, self.stats, self.profile, level, pid, 1);
        let verified = split_delta_verified(
            over,
            a,
            s,
            left.members.len(),
            right.members.len(),
            self.config.alpha,
            self.profile,
        )?;
        let parent = self.index.parent(level, pid).expect("non-root partition");
        let before = total_cost(self.index, self.stats, self.profile);
        let cp = self.index.checkpoint(&[(level, pid), (level + 1, parent)]);
        let (l, r) = self.index.split_partition_into(
            level,
            pid,
            (&left.centroid, &left.members),
            (&right.centroid, &right.members),
        )?;
        let child_a = self.config.alpha * a;
        self.stats.set_frequency(level, l, child_a);
        self.stats.set_frequency(level, r, child_a);
        let saved_a = self.stats.frequency(level, pid);
        self.stats.set_frequency(level, pid, 0.0);
        record.observed_delta = Some(total_cost(self.index, self.stats, self.profile) - before);
        record.verified_delta = Some(verified);
        if self.commit(verified) {
            record.decision = Decision::Commit;
            record.sizes_after = vec![left.members.len(), right.members.len()];
            record.created = vec![l, r];
            self.stats.forget(level, pid);
            if self.config.refine {
                refine_partitions(
                    self.index,
                    level,
                    &[l, r],
                    self.config.refine_radius,
                    self.config.refine_iters,
                )?;
            }
        } else {
            self.index.restore(cp);
            self.stats.forget(level, l);
            self.stats.forget(level, r);
            self.stats.set_frequency(level, pid, saved_a);
        }
        self.records.push(record);
        Ok(())
    }

    fn try_merge(&mut self, level: usize, pid: PartitionId, estimate: f64) -> Result<()> {
        if self.index.partition(level, pid).is_none() || self.index.partition_count(level) < 2 {
            return Ok(());
        }
        let s = self.index.partition_size(level, pid);
        let a = self.stats.frequency(level, pid);
        let receivers = merge_receivers(self.index, level, pid, self.config.refine_radius);
        let parent = self.index.parent(level, pid).expect("non-root partition");
        let over = overhead(self.index, self.stats, self.profile, level, pid, -1);
        let before_sizes: Vec<usize> = receivers
            .iter()
            .map(|m| self.index.partition_size(level, *m))
            .collect();
        let before_a: Vec<f64> = receivers
            .iter()
            .map(|m| self.stats.frequency(level, *m))
            .collect();

        let mut touched = vec![(level, pid), (level + 1, parent)];
        touched.extend(receivers.iter().map(|m| (level, *m)));
        let before = total_cost(self.index, self.stats, self.profile);
        let cp = self.index.checkpoint(&touched);
        let gained = self.index.merge_partition_into(level, pid, &receivers)?;
        let verified = merge_delta_verified(
            over,
            a,
            s,
            &before_sizes
                .iter()
                .zip(&before_a)
                .zip(&gained)
                .map(|((&sm, &am), &ds)| (am, sm, ds))
                .collect::<Vec<_>>(),
            self.profile,
        );
        for ((m, &am), &ds) in receivers.iter().zip(&before_a).zip(&gained) {
            if s > 0 {
                self.stats
                    .set_frequency(level, *m, am + a * ds as f64 / s as f64);
            }
        }
        self.stats.set_frequency(level, pid, 0.0);
        let observed = total_cost(self.index, self.stats, self.profile) - before;

        let mut record = ActionRecord {
            kind: ActionKind::Merge,
            level,
            partition: Some(pid),
            estimated_delta: Some(estimate),
            verified_delta: Some(verified),
            observed_delta: Some(observed),
            decision: Decision::Reject,
            sizes_before: std::iter::once(s)
                .chain(before_sizes.iter().copied())
                .collect(),
            sizes_after: std::iter::once(s)
                .chain(before_sizes.iter().copied())
                .collect(),
            created: Vec::new(),
        };
        if self.commit(verified) {
            record.decision = Decision::Commit;
            record.sizes_after = std::iter::once(0)
                .chain(before_sizes.iter().zip(&gained).map(|(a, b)| a + b))
                .collect();
            self.stats.forget(level, pid);
        } else {
            self.index.restore(cp);
            for (m, &am) in receivers.iter().zip(&before_a) {
                self.stats.set_frequency(level, *m, am);
            }
            self.stats.set_frequency(level, pid, a);
        }
        self.records.push(record);
        Ok(())
    }

    fn level(&mut self, level: usize) -> Result<()> {
        let config = self.config;
        let pids = self.index.partition_ids(level);
        let mut splits = Vec::new();
        for &pid in &pids {
            if self.index.partition_size(level, pid) < 2 {
                continue;
            }
            let est = estimate_split_delta(
                self.index,
                self.stats,
                self.profile,
                level,
                pid,
                config.alpha,
            );
            if est < -config.tau {
                splits.push((est, pid));
            }
        }

        let mut merges = Vec::new();
        if pids.len() > 1 {
            let sizes: Vec<usize> = pids
                .iter()
                .map(|p| self.index.partition_size(level, *p))
                .collect();
            let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
            let min_size = config.min_size_fraction * mean;
            let mut costs: Vec<f64> = pids
                .iter()
                .zip(&sizes)
                .map(|(p, &s)| self.stats.frequency(level, *p) * self.profile.eval(s as f64))
                .collect();
            let per_pid = costs.clone();
            costs.sort_by(f64::total_cmp);
            let median = costs[costs.len() / 2];
            for ((&pid, &s), &cost) in pids.iter().zip(&sizes).zip(&per_pid) {
                if (s as f64) < min_size && (cost < median || cost == 0.0) {
                    let est = estimate_merge_delta(
                        self.index,
                        self.stats,
                        self.profile,
                        level,
                        pid,
                        config.refine_radius,
                    )?;
                    if est < -config.tau {
                        merges.push((est, pid));
                    }
                }
            }
        }

        let order = |v: &mut Vec<(f64, PartitionId)>| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        };
        order(&mut splits);
        order(&mut merges);
        for (est, pid) in splits {
            self.try_split(level, pid, est)?;
        }
        for (est, pid) in merges {
            self.try_merge(level, pid, est)?;
        }
        Ok(())
    }

    fn levels(&mut self) -> Result<()> {
        let root = self.index.root_id();
        let root_size = self.index.partition_size(self.index.root_level(), root);
        let top = self.index.root_level();
        if root_size > self.config.add_level_threshold {
            let n_new = ((root_size as f64).sqrt().ceil() as usize).max(2);
            let before = self.index.partition_count(top - 1);
            self.index.add_level(n_new, self.rng.random())?;
            self.records.push(ActionRecord {
                kind: ActionKind::AddLevel,
                level: top,
                partition: Some(root),
                estimated_delta: None,
                verified_delta: None,
                observed_delta: None,
                decision: Decision::Commit,
                sizes_before: vec![before],
                sizes_after: self.index.partition_sizes(top),
                created: self.index.partition_ids(top),
            });
        } else if self.index.num_levels() >= 2 && root_size < self.config.remove_level_threshold {
            let sizes_before = self.index.partition_sizes(top - 1);
            self.index.remove_level()?;
            self.records.push(ActionRecord {
                kind: ActionKind::RemoveLevel,
                level: top - 1,
                partition: Some(root),
                estimated_delta: None,
                verified_delta: None,
                observed_delta: None,
                decision: Decision::Commit,
                sizes_before,
                sizes_after: vec![self.index.partition_size(top - 1, self.index.root_id())],
                created: vec![self.index.root_id()],
            });
        }
        Ok(())
    }
}

/// One bottom-up maintenance pass using two-way k-means for splits.
pub fn maintenance_pass(
    index: &mut MultiLevelIndex,
    stats: &mut PartitionStats,
    profile: &LatencyProfile,
    config: &MaintenanceConfig,
) -> Result<Vec<ActionRecord>> {
    let metric = index.metric();
    let mut splitter = |v: &[f32], dim: usize, seed: u64| split_partition(v, dim, seed, metric);
    maintenance_pass_with(index, stats, profile, config, &mut splitter)
}

/// [`maintenance_pass`] with a caller-supplied splitter.
pub fn maintenance_pass_with(
    index: &mut MultiLevelIndex,
    stats: &mut PartitionStats,
    profile: &LatencyProfile,
    config: &MaintenanceConfig,
    splitter: &mut Splitter<'_>,
) -> Result<Vec<ActionRecord>> {
    config.validate()?;
    let mut pass = Pass {
        index,
        stats,
        profile,
        config,
        splitter,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        records: Vec::new(),
    };
    let mut level = 0;
    while level < pass.index.num_levels() {
        pass.level(level)?;
        level += 1;
    }
    pass.levels()?;
    let Pass {
        index,
        stats,
        records,
        ..
    } = pass;
    stats.retain_existing(index);
    Ok(records)
}

/// Tentatively applies one split or merge regardless of its estimate,
/// verifies it and commits or rolls back. The pass uses the same path for
/// every qualifying candidate.
#[allow(clippy::too_many_arguments)]
pub fn apply_action(
    index: &mut MultiLevelIndex,
    stats: &mut PartitionStats,
    profile: &LatencyProfile,
    config: &MaintenanceConfig,
    kind: ActionKind,
    level: usize,
    pid: PartitionId,
    splitter: &mut Splitter<'_>,
) -> Result<ActionRecord> {
    config.validate()?;
    if level >= index.root_level() || index.partition(level, pid).is_none() {
        return Err(Error::invalid(format!(
            "no partition {pid} below the root at level {level}"
        )));
    }
    let estimate = match kind {
        ActionKind::Split => {
            if index.partition_size(level, pid) < 2 {
                return Err(Error::invalid("a split needs at least two vectors"));
            }
            estimate_split_delta(index, stats, profile, level, pid, config.alpha)
        }
        ActionKind::Merge => {
            estimate_merge_delta(index, stats, profile, level, pid, config.refine_radius)?
        }
        _ => return Err(Error::invalid("only splits and merges are tentative")),
    };
    let mut pass = Pass {
        index,
        stats,
        profile,
        config,
        splitter,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        records: Vec::new(),
    };
    match kind {
        ActionKind::Split => pass.try_split(level, pid, estimate)?,
        _ => pass.try_merge(level, pid, estimate)?,
    }
    Ok(pass.records.pop().expect("one record"))
}

/// Size-threshold baseline: split anything above the max size and merge
/// anything below the min size into its nearest neighbors, unconditionally.
pub fn size_threshold_baseline_pass(
    index: &mut MultiLevelIndex,
    stats: &mut PartitionStats,
    config: &MaintenanceConfig,
) -> Result<Vec<ActionRecord>> {
    let mean = index.len() as f64 / index.partition_count(0).max(1) as f64;
    let max = config
        .max_partition_size
        .unwrap_or((2.0 * mean).ceil() as usize)
        .max(2);
    let min = config
        .min_partition_size
        .unwrap_or((config.min_size_fraction * mean) as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    let dim = index.dim();
    let metric = index.metric();

    let mut queue: Vec<PartitionId> = index.partition_ids(0);
    while let Some(pid) = queue.pop() {
        let Some(p) = index.partition(0, pid) else {
            continue;
        };
        let s = p.len();
        if s <= max {
            continue;
        }
        if let SplitOutcome::Split { left, right } =
            split_partition(p.data(), dim, rng.random(), metric)?
        {
            let (l, r) = index.split_partition_into(
                0,
                pid,
                (&left.centroid, &left.members),
                (&right.centroid, &right.members),
            )?;
            let a = stats.frequency(0, pid);
            stats.forget(0, pid);
            stats.set_frequency(0, l, a / 2.0);
            stats.set_frequency(0, r, a / 2.0);
            if config.refine {
                refine_partitions(index, 0, &[l, r], config.refine_radius, config.refine_iters)?;
            }
            records.push(ActionRecord {
                kind: ActionKind::Split,
                level: 0,
                partition: Some(pid),
                estimated_delta: None,
                verified_delta: None,
                observed_delta: None,
                decision: Decision::Commit,
                sizes_before: vec![s],
                sizes_after: vec![left.members.len(), right.members.len()],
                created: vec![l, r],
            });
            queue.push(l);
            queue.push(r);
        }
    }

    for pid in index.partition_ids(0) {
        let s = index.partition_size(0, pid);
        if s >= min || index.partition_count(0) < 2 {
            continue;
        }
        let receivers = merge_receivers(index, 0, pid, config.refine_radius);
        let before: Vec<usize> = receivers
            .iter()
            .map(|m| index.partition_size(0, *m))
            .collect();
        let gained = index.merge_partition_into(0, pid, &receivers)?;
        let a = stats.frequency(0, pid);
        for (m, &ds) in receivers.iter().zip(&gained) {
            if s > 0 {
                let am = stats.frequency(0, *m);
                stats.set_frequency(0, *m, am + a * ds as f64 / s as f64);
            }
        }
        stats.forget(0, pid);
        records.push(ActionRecord {
            kind: ActionKind::Merge,
            level: 0,
            partition: Some(pid),
            estimated_delta: None,
            verified_delta: None,
            observed_delta: None,
            decision: Decision::Commit,
            sizes_before: std::iter::once(s).chain(before.iter().copied()).collect(),
            sizes_after: std::iter::once(0)
                .chain(before.iter().zip(&gained).map(|(a, b)| a + b))
                .collect(),
            created: Vec::new(),
        });
    }
    stats.retain_existing(index);
    Ok(records)
}

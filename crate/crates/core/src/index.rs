//! The multi-level partitioned index.
//!
//! Level 0 partitions hold data vectors. A partition at level `l > 0` holds
//! one row per child partition at level `l - 1`: the child's centroid, keyed
//! by the child's [`PartitionId`]. The root level holds exactly one partition
//! whose rows are the centroids of the highest partitioned level. An index
//! with `num_levels() == 1` is the classic flat IVF layout: level 0 plus the
//! root partition of level-0 centroids.
//!
//! Every level keeps a location map from item id to `(partition, row)`; for
//! level 0 this is the vector-to-partition map used by deletes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, Clustering, KMeansConfig};
use crate::error::{Error, Result};
use crate::kernels::{l2_sq, norm_sq, Metric, TopKBuffer, VectorId};
use crate::store::VectorStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartitionId(pub u64);

impl fmt::Display for PartitionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A contiguous block of rows plus their ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    ids: Vec<u64>,
    data: Vec<f32>,
}

impl Partition {
    pub(crate) fn from_parts(ids: Vec<u64>, data: Vec<f32>) -> Self {
        Self { ids, data }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize, dim: usize) -> &[f32] {
        &self.data[r * dim..(r + 1) * dim]
    }

    fn push(&mut self, id: u64, v: &[f32]) {
        self.ids.push(id);
        self.data.extend_from_slice(v);
    }

    /// Removes row `r` by moving the last row into it. Returns the id of the
    /// moved row, if any.
    fn swap_remove(&mut self, r: usize, dim: usize) -> Option<u64> {
        let last = self.ids.len() - 1;
        self.ids.swap_remove(r);
        if r != last {
            let (head, tail) = self.data.split_at_mut(last * dim);
            head[r * dim..(r + 1) * dim].copy_from_slice(&tail[..dim]);
        }
        self.data.truncate(last * dim);
        (r != last).then(|| self.ids[r])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub partition: PartitionId,
    pub row: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Level {
    pub(crate) partitions: BTreeMap<PartitionId, Partition>,
    locations: HashMap<u64, Location>,
}

impl Level {
    fn push_item(&mut self, pid: PartitionId, id: u64, v: &[f32]) {
        let p = self.partitions.get_mut(&pid).expect("target partition");
        self.locations.insert(
            id,
            Location {
                partition: pid,
                row: p.len(),
            },
        );
        p.push(id, v);
    }

    fn remove_item(&mut self, id: u64, dim: usize) -> Option<(PartitionId, Vec<f32>)> {
        let loc = self.locations.remove(&id)?;
        let p = self
            .partitions
            .get_mut(&loc.partition)
            .expect("located partition");
        let v = p.row(loc.row, dim).to_vec();
        if let Some(moved) = p.swap_remove(loc.row, dim) {
            self.locations.get_mut(&moved).expect("moved item").row = loc.row;
        }
        Some((loc.partition, v))
    }

    fn reindex(&mut self, pid: PartitionId) {
        let p = &self.partitions[&pid];
        for (row, &id) in p.ids.iter().enumerate() {
            self.locations.insert(
                id,
                Location {
                    partition: pid,
                    row,
                },
            );
        }
    }

    fn item_count(&self) -> usize {
        self.locations.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    /// Partition counts from level 0 upward, strictly decreasing. Empty means
    /// a single level with `ceil(sqrt(n))` partitions.
    pub partitions_per_level: Vec<usize>,
    pub metric: Metric,
    pub seed: u64,
    pub kmeans_iters: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            partitions_per_level: Vec::new(),
            metric: Metric::L2,
            seed: 42,
            kmeans_iters: 10,
        }
    }
}

/// Saved copies of the partitions an action is about to touch.
#[derive(Debug, Clone)]
pub(crate) struct Checkpoint {
    next_partition: u64,
    saved: Vec<(usize, PartitionId, Partition)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLevelIndex {
    dim: usize,
    metric: Metric,
    levels: Vec<Level>,
    next_partition: u64,
    /// Largest squared norm of any vector ever inserted at level 0.
    max_norm_sq: f32,
}

fn level_seed(seed: u64, level: usize) -> u64 {
    seed.wrapping_add((level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl MultiLevelIndex {
    pub fn build(store: &VectorStore, config: &BuildConfig) -> Result<Self> {
        let n = store.len();
        if n == 0 {
            return Err(Error::invalid("cannot build an index over zero vectors"));
        }
        let counts = if config.partitions_per_level.is_empty() {
            vec![(n as f64).sqrt().ceil() as usize]
        } else {
            config.partitions_per_level.clone()
        };
        if counts[0] == 0 || counts[0] > n {
            return Err(Error::invalid(format!(
                "level 0 needs between 1 and {n} partitions, got {}",
                counts[0]
            )));
        }
        for w in counts.windows(2) {
            if w[1] == 0 || w[1] >= w[0] {
                return Err(Error::invalid(format!(
                    "partition counts must strictly decrease up the hierarchy: {counts:?}"
                )));
            }
        }

        let dim = store.dim();
        let mut index = Self {
            dim,
            metric: config.metric,
            levels: Vec::new(),
            next_partition: 0,
            max_norm_sq: store
                .data()
                .chunks_exact(dim)
                .map(norm_sq)
                .fold(0.0, f32::max),
        };

        let mut items: Vec<u64> = store.ids().to_vec();
        let mut vectors: Vec<f32> = store.data().to_vec();
        for (l, &k) in counts.iter().enumerate() {
            let clustering = kmeans(
                &vectors,
                dim,
                &KMeansConfig {
                    n_clusters: k.min(items.len()),
                    n_iters: config.kmeans_iters,
                    seed: level_seed(config.seed, l),
                    metric: config.metric,
                },
            )?;
            let (level, pids) = index.level_from_clustering(&items, &vectors, &clustering);
            index.levels.push(level);
            items = pids.iter().map(|p| p.0).collect();
            vectors = clustering.centroids;
        }
        let root = index.alloc();
        let mut level = Level::default();
        level
            .partitions
            .insert(root, Partition::from_parts(items, vectors));
        level.reindex(root);
        index.levels.push(level);
        Ok(index)
    }

    fn alloc(&mut self) -> PartitionId {
        let id = PartitionId(self.next_partition);
        self.next_partition += 1;
        id
    }

    fn level_from_clustering(
        &mut self,
        items: &[u64],
        vectors: &[f32],
        clustering: &Clustering,
    ) -> (Level, Vec<PartitionId>) {
        let pids: Vec<PartitionId> = (0..clustering.n_clusters()).map(|_| self.alloc()).collect();
        let mut level = Level::default();
        for &pid in &pids {
            level.partitions.insert(pid, Partition::default());
        }
        for ((&id, v), &a) in items
            .iter()
            .zip(vectors.chunks_exact(self.dim))
            .zip(&clustering.assignments)
        {
            level.push_item(pids[a], id, v);
        }
        (level, pids)
    }

    /// Reassembles an index from raw partitions, rebuilding location maps.
    pub(crate) fn from_raw(
        dim: usize,
        metric: Metric,
        next_partition: u64,
        max_norm_sq: f32,
        raw: Vec<BTreeMap<PartitionId, Partition>>,
    ) -> Result<Self> {
        let levels = raw
            .into_iter()
            .map(|partitions| {
                let mut level = Level {
                    partitions,
                    locations: HashMap::new(),
                };
                let pids: Vec<PartitionId> = level.partitions.keys().copied().collect();
                for pid in pids {
                    level.reindex(pid);
                }
                level
            })
            .collect();
        let index = Self {
            dim,
            metric,
            levels,
            next_partition,
            max_norm_sq,
        };
        index.check_invariants()?;
        Ok(index)
    }

    pub(crate) fn raw_levels(&self) -> impl Iterator<Item = &BTreeMap<PartitionId, Partition>> {
        self.levels.iter().map(|l| &l.partitions)
    }

    pub(crate) fn next_partition_id(&self) -> u64 {
        self.next_partition
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Number of level-0 vectors.
    pub fn len(&self) -> usize {
        self.levels[0].item_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Partitioned levels, excluding the root.
    pub fn num_levels(&self) -> usize {
        self.levels.len() - 1
    }

    /// Level index of the single root partition.
    pub fn root_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn root_id(&self) -> PartitionId {
        *self.levels[self.root_level()]
            .partitions
            .keys()
            .next()
            .expect("root partition")
    }

    pub fn max_norm_sq(&self) -> f32 {
        self.max_norm_sq
    }

    pub fn partition_count(&self, level: usize) -> usize {
        self.levels.get(level).map_or(0, |l| l.partitions.len())
    }

    pub fn partition_ids(&self, level: usize) -> Vec<PartitionId> {
        self.levels
            .get(level)
            .map(|l| l.partitions.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn partitions(&self, level: usize) -> impl Iterator<Item = (PartitionId, &Partition)> {
        self.levels[level].partitions.iter().map(|(k, v)| (*k, v))
    }

    pub fn partition(&self, level: usize, pid: PartitionId) -> Option<&Partition> {
        self.levels.get(level)?.partitions.get(&pid)
    }

    pub fn partition_size(&self, level: usize, pid: PartitionId) -> usize {
        self.partition(level, pid).map_or(0, Partition::len)
    }

    /// Sizes of all partitions at `level`, in partition-id order.
    pub fn partition_sizes(&self, level: usize) -> Vec<usize> {
        self.partitions(level).map(|(_, p)| p.len()).collect()
    }

    /// The centroid of a non-root partition, stored as a row of its parent.
    pub fn centroid(&self, level: usize, pid: PartitionId) -> Option<&[f32]> {
        let upper = self.levels.get(level + 1)?;
        let loc = upper.locations.get(&pid.0)?;
        Some(upper.partitions[&loc.partition].row(loc.row, self.dim))
    }

    pub fn parent(&self, level: usize, pid: PartitionId) -> Option<PartitionId> {
        self.levels
            .get(level + 1)?
            .locations
            .get(&pid.0)
            .map(|l| l.partition)
    }

    /// All centroids of `level`, in parent-partition then row order.
    pub fn centroids(&self, level: usize) -> Vec<(PartitionId, &[f32])> {
        let Some(upper) = self.levels.get(level + 1) else {
            return Vec::new();
        };
        upper
            .partitions
            .values()
            .flat_map(|p| {
                p.ids
                    .iter()
                    .zip(p.data.chunks_exact(self.dim))
                    .map(|(&id, c)| (PartitionId(id), c))
            })
            .collect()
    }

    /// Partition holding a level-0 vector.
    pub fn locate(&self, id: VectorId) -> Option<PartitionId> {
        self.levels[0].locations.get(&id).map(|l| l.partition)
    }

    pub fn contains(&self, id: VectorId) -> bool {
        self.levels[0].locations.contains_key(&id)
    }

    pub fn get_vector(&self, id: VectorId) -> Option<&[f32]> {
        let loc = self.levels[0].locations.get(&id)?;
        Some(self.levels[0].partitions[&loc.partition].row(loc.row, self.dim))
    }

    /// Ids of every level-0 vector, unordered.
    pub fn vector_ids(&self) -> HashSet<VectorId> {
        self.levels[0].locations.keys().copied().collect()
    }

    /// L2-nearest partition at `level`, scanning every centroid of that level.
    pub fn nearest_partition(&self, level: usize, v: &[f32]) -> Option<PartitionId> {
        self.centroids(level)
            .into_iter()
            .map(|(pid, c)| (l2_sq(v, c), pid))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, pid)| pid)
    }

    /// Appends a vector to the level-0 partition with the nearest centroid.
    ///
    /// Centroids are not updated; they drift until maintenance refines them.
    pub fn insert(&mut self, id: VectorId, v: &[f32]) -> Result<PartitionId> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if self.contains(id) {
            return Err(Error::DuplicateId(id));
        }
        let pid = self
            .nearest_partition(0, v)
            .ok_or_else(|| Error::InvalidState("index has no level-0 partitions".into()))?;
        self.levels[0].push_item(pid, id, v);
        self.max_norm_sq = self.max_norm_sq.max(norm_sq(v));
        Ok(pid)
    }

    /// Removes a vector, compacting its partition. Returns false if absent.
    pub fn delete(&mut self, id: VectorId) -> bool {
        self.levels[0].remove_item(id, self.dim).is_some()
    }

    /// Scans one partition into `buf`, returning the number of rows scored.
    pub fn scan_partition(
        &self,
        level: usize,
        pid: PartitionId,
        query: &[f32],
        buf: &mut TopKBuffer,
    ) -> usize {
        match self.partition(level, pid) {
            Some(p) => {
                buf.scan(query, &p.ids, &p.data);
                p.len()
            }
            None => 0,
        }
    }

    /// Clusters the root's centroids into `n_new` partitions, adding a level.
    pub fn add_level(&mut self, n_new: usize, seed: u64) -> Result<()> {
        let top = self.root_level();
        let root_pid = self.root_id();
        let root_len = self.levels[top].partitions[&root_pid].len();
        if n_new == 0 || n_new > root_len {
            return Err(Error::invalid(format!(
                "cannot group {root_len} top-level centroids into {n_new} partitions"
            )));
        }
        let root = self.levels[top].partitions[&root_pid].clone();
        let clustering = kmeans(
            &root.data,
            self.dim,
            &KMeansConfig {
                n_clusters: n_new,
                n_iters: 10,
                seed,
                metric: self.metric,
            },
        )?;
        let (level, pids) = self.level_from_clustering(&root.ids, &root.data, &clustering);
        let new_root = self.alloc();
        let mut root_level = Level::default();
        root_level.partitions.insert(
            new_root,
            Partition::from_parts(pids.iter().map(|p| p.0).collect(), clustering.centroids),
        );
        root_level.reindex(new_root);
        self.levels[top] = level;
        self.levels.push(root_level);
        Ok(())
    }

    /// Collapses the highest partitioned level into a new root partition.
    pub fn remove_level(&mut self) -> Result<()> {
        if self.num_levels() < 2 {
            return Err(Error::InvalidState(
                "cannot remove the only partitioned level".into(),
            ));
        }
        self.levels.pop();
        let top = self.root_level();
        let mut merged = Partition::default();
        for p in self.levels[top].partitions.values() {
            merged.ids.extend_from_slice(&p.ids);
            merged.data.extend_from_slice(&p.data);
        }
        let root = self.alloc();
        let mut level = Level::default();
        level.partitions.insert(root, merged);
        level.reindex(root);
        self.levels[top] = level;
        Ok(())
    }

    /// Verifies id conservation, map consistency and hierarchy consistency.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidState(m));
        if self.levels.len() < 2 {
            return bad("index needs at least one level plus the root".into());
        }
        if self.levels[self.root_level()].partitions.len() != 1 {
            return bad("root level must hold exactly one partition".into());
        }
        for (l, level) in self.levels.iter().enumerate() {
            let mut rows = 0;
            for (&pid, p) in &level.partitions {
                if p.data.len() != p.ids.len() * self.dim {
                    return bad(format!("level {l} {pid}: ids and data disagree"));
                }
                for (row, id) in p.ids.iter().enumerate() {
                    match level.locations.get(id) {
                        Some(loc) if loc.partition == pid && loc.row == row => {}
                        other => {
                            return bad(format!(
                                "level {l}: item {id} in {pid} row {row} mapped to {other:?}"
                            ))
                        }
                    }
                }
                rows += p.len();
            }
            if rows != level.locations.len() {
                return bad(format!(
                    "level {l}: {rows} rows but {} mapped items",
                    level.locations.len()
                ));
            }
            if l + 1 < self.levels.len() {
                let upper = &self.levels[l + 1];
                if upper.locations.len() != level.partitions.len() {
                    return bad(format!(
                        "level {l} has {} partitions but {} centroids above",
                        level.partitions.len(),
                        upper.locations.len()
                    ));
                }
                for pid in level.partitions.keys() {
                    if !upper.locations.contains_key(&pid.0) {
                        return bad(format!("level {l} {pid} has no centroid row"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Union of the `r` partitions nearest (by centroid) to each seed.
    pub fn neighborhood(&self, level: usize, seeds: &[PartitionId], r: usize) -> Vec<PartitionId> {
        let all = self.centroids(level);
        let mut out: Vec<PartitionId> = Vec::new();
        for s in seeds {
            let Some(sc) = self.centroid(level, *s) else {
                continue;
            };
            let mut ranked: Vec<(f32, PartitionId)> =
                all.iter().map(|(pid, c)| (l2_sq(sc, c), *pid)).collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            out.push(*s);
            out.extend(ranked.iter().take(r).map(|x| x.1));
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn set_centroid(&mut self, level: usize, pid: PartitionId, c: &[f32]) {
        let dim = self.dim;
        let upper = &mut self.levels[level + 1];
        let loc = upper.locations[&pid.0];
        let p = upper.partitions.get_mut(&loc.partition).expect("parent");
        p.data[loc.row * dim..(loc.row + 1) * dim].copy_from_slice(c);
    }

    /// Moves items to `neighborhood[assignment]` and installs new centroids.
    pub(crate) fn apply_reassignment(
        &mut self,
        level: usize,
        neighborhood: &[PartitionId],
        ids: &[u64],
        clustering: &Clustering,
    ) -> Result<()> {
        let dim = self.dim;
        for (&id, &a) in ids.iter().zip(&clustering.assignments) {
            let target = neighborhood[a];
            let lvl = &mut self.levels[level];
            if lvl.locations[&id].partition != target {
                let (_, v) = lvl.remove_item(id, dim).expect("neighborhood item");
                lvl.push_item(target, id, &v);
            }
        }
        for (slot, &pid) in neighborhood.iter().enumerate() {
            self.set_centroid(level, pid, clustering.centroid(slot));
        }
        Ok(())
    }

    pub(crate) fn checkpoint(&self, touched: &[(usize, PartitionId)]) -> Checkpoint {
        let mut saved = Vec::new();
        let mut seen = HashSet::new();
        for &(l, pid) in touched {
            if seen.insert((l, pid)) {
                if let Some(p) = self.partition(l, pid) {
                    saved.push((l, pid, p.clone()));
                }
            }
        }
        Checkpoint {
            next_partition: self.next_partition,
            saved,
        }
    }

    /// Undoes every change made to the checkpointed partitions since the
    /// checkpoint, dropping partitions created after it.
    pub(crate) fn restore(&mut self, cp: Checkpoint) {
        let boundary = PartitionId(cp.next_partition);
        for l in 0..self.levels.len() {
            let created: Vec<PartitionId> = self.levels[l]
                .partitions
                .range(boundary..)
                .map(|(k, _)| *k)
                .collect();
            for pid in created {
                let p = self.levels[l].partitions.remove(&pid).expect("created");
                for id in &p.ids {
                    if self.levels[l].locations.get(id).map(|x| x.partition) == Some(pid) {
                        self.levels[l].locations.remove(id);
                    }
                }
                if let Some(upper) = self.levels.get_mut(l + 1) {
                    upper.locations.remove(&pid.0);
                }
            }
        }
        for (l, pid, p) in cp.saved {
            self.levels[l].partitions.insert(pid, p);
            self.levels[l].reindex(pid);
        }
        self.next_partition = cp.next_partition;
    }

    /// Replaces partition `pid` with two children built from its rows.
    ///
    /// `left` and `right` are row indices into the partition and must cover
    /// it exactly. Returns the children's ids.
    pub(crate) fn split_partition_into(
        &mut self,
        level: usize,
        pid: PartitionId,
        left: (&[f32], &[usize]),
        right: (&[f32], &[usize]),
    ) -> Result<(PartitionId, PartitionId)> {
        if level >= self.root_level() {
            return Err(Error::invalid("the root partition cannot be split"));
        }
        let dim = self.dim;
        let parent = self
            .parent(level, pid)
            .ok_or_else(|| Error::invalid(format!("no partition {pid} at level {level}")))?;
        let old = self.levels[level]
            .partitions
            .remove(&pid)
            .expect("partition");
        if left.1.len() + right.1.len() != old.len() {
            self.levels[level].partitions.insert(pid, old);
            return Err(Error::invalid("split halves do not cover the partition"));
        }
        for id in &old.ids {
            self.levels[level].locations.remove(id);
        }
        self.levels[level + 1].remove_item(pid.0, dim);

        let mut children = [PartitionId(0); 2];
        for (slot, (centroid, rows)) in [left, right].into_iter().enumerate() {
            let child = self.alloc();
            children[slot] = child;
            self.levels[level]
                .partitions
                .insert(child, Partition::default());
            for &r in rows {
                self.levels[level].push_item(child, old.ids[r], old.row(r, dim));
            }
            self.levels[level + 1].push_item(parent, child.0, centroid);
        }
        Ok((children[0], children[1]))
    }

    /// Deletes partition `pid`, sending each row to its L2-nearest receiver.
    ///
    /// Returns how many rows each receiver got, in `receivers` order.
    pub(crate) fn merge_partition_into(
        &mut self,
        level: usize,
        pid: PartitionId,
        receivers: &[PartitionId],
    ) -> Result<Vec<usize>> {
        if receivers.is_empty() || receivers.contains(&pid) {
            return Err(Error::invalid(
                "merge needs receivers other than the source",
            ));
        }
        let dim = self.dim;
        let centroids: Vec<Vec<f32>> = receivers
            .iter()
            .map(|r| {
                self.centroid(level, *r)
                    .map(<[f32]>::to_vec)
                    .ok_or_else(|| Error::invalid(format!("no receiver {r} at level {level}")))
            })
            .collect::<Result<_>>()?;
        if self.parent(level, pid).is_none() {
            return Err(Error::invalid(format!(
                "no partition {pid} at level {level}"
            )));
        }
        let old = self.levels[level]
            .partitions
            .remove(&pid)
            .expect("partition");
        for id in &old.ids {
            self.levels[level].locations.remove(id);
        }
        self.levels[level + 1].remove_item(pid.0, dim);

        let mut received = vec![0usize; receivers.len()];
        for (r, &id) in old.ids.iter().enumerate() {
            let v = old.row(r, dim);
            let best = centroids
                .iter()
                .enumerate()
                .map(|(i, c)| (l2_sq(v, c), i))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .expect("receivers")
                .1;
            received[best] += 1;
            self.levels[level].push_item(receivers[best], id, v);
        }
        Ok(received)
    }
}

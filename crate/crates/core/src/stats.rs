//! Per-partition access counting over a window of queries.

use std::collections::HashMap;

use crate::index::{MultiLevelIndex, PartitionId};

type Key = (usize, PartitionId);

/// Hit counters for the current window plus the frequencies `A` computed at
/// the last rollover.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartitionStats {
    window_queries: u64,
    hits: HashMap<Key, u64>,
    frequency: HashMap<Key, f64>,
}

impl PartitionStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_query(&mut self) {
        self.window_queries += 1;
    }

    pub fn record_access(&mut self, level: usize, pid: PartitionId) {
        *self.hits.entry((level, pid)).or_default() += 1;
    }

    /// Counts one query that scanned `scanned`.
    pub fn record_scan(&mut self, scanned: &[(usize, PartitionId)]) {
        self.record_query();
        for &(l, p) in scanned {
            self.record_access(l, p);
        }
    }

    pub fn window_queries(&self) -> u64 {
        self.window_queries
    }

    pub fn hits(&self, level: usize, pid: PartitionId) -> u64 {
        self.hits.get(&(level, pid)).copied().unwrap_or(0)
    }

    /// Sets `A = hits / |W|` for every partition and clears the counters.
    ///
    /// A window with no queries carries no information, so the previous
    /// frequencies are kept.
    pub fn roll_window(&mut self) {
        if self.window_queries == 0 {
            return;
        }
        let w = self.window_queries as f64;
        self.frequency = self.hits.drain().map(|(k, h)| (k, h as f64 / w)).collect();
        self.window_queries = 0;
    }

    pub fn frequency(&self, level: usize, pid: PartitionId) -> f64 {
        self.frequency.get(&(level, pid)).copied().unwrap_or(0.0)
    }

    pub fn set_frequency(&mut self, level: usize, pid: PartitionId, a: f64) {
        if a == 0.0 {
            self.frequency.remove(&(level, pid));
        } else {
            self.frequency.insert((level, pid), a);
        }
    }

    pub fn forget(&mut self, level: usize, pid: PartitionId) {
        self.hits.remove(&(level, pid));
        self.frequency.remove(&(level, pid));
    }

    /// Drops entries for partitions that no longer exist in `index`.
    pub fn retain_existing(&mut self, index: &MultiLevelIndex) {
        let live = |k: &Key| index.partition(k.0, k.1).is_some();
        self.hits.retain(|k, _| live(k));
        self.frequency.retain(|k, _| live(k));
    }
}

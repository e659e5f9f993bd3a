//! The search engine: an index plus its statistics, latency profile and
//! configuration.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aps::{search, ApsConfig, BetaTable, Geometry, SearchOutcome};
use crate::error::{Error, Result};
use crate::executor::{execute_parallel, plan_query, NodeTopology};
use crate::index::{BuildConfig, MultiLevelIndex};
use crate::kernels::VectorId;
use crate::maintenance::{
    maintenance_pass, profile_scan_latency, size_threshold_baseline_pass, total_cost, ActionRecord,
    LatencyProfile, MaintenanceConfig,
};
use crate::persist::{load_index, save_index};
use crate::stats::PartitionStats;
use crate::store::VectorStore;

pub type SearchHit = SearchOutcome;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaintenancePolicy {
    /// Estimate, verify and commit against the cost model.
    #[default]
    CostModel,
    /// Split above and merge below fixed size thresholds.
    SizeThreshold,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileSettings {
    pub grid: Vec<usize>,
    pub repetitions: usize,
}

impl Default for ProfileSettings {
    fn default() -> Self {
        Self {
            grid: vec![1, 8, 32, 128, 512, 2048, 8192, 32768],
            repetitions: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub build: BuildConfig,
    pub aps: ApsConfig,
    pub maintenance: MaintenanceConfig,
    pub policy: MaintenancePolicy,
    pub topology: NodeTopology,
    /// When false, every query scans a fixed number of partitions.
    pub use_aps: bool,
    /// Partitions scanned when the estimator is off. `None` calibrates it
    /// at build time to the estimator's mean on sample queries.
    pub fixed_nprobe: Option<usize>,
    pub profile: ProfileSettings,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            build: BuildConfig::default(),
            aps: ApsConfig::default(),
            maintenance: MaintenanceConfig::default(),
            policy: MaintenancePolicy::default(),
            topology: NodeTopology::default(),
            use_aps: true,
            fixed_nprobe: None,
            profile: ProfileSettings::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.aps.validate()?;
        self.maintenance.validate()?;
        self.topology.validate()?;
        if self.fixed_nprobe == Some(0) {
            return Err(Error::invalid("fixed nprobe must be positive"));
        }
        if self.profile.repetitions == 0 || self.profile.grid.len() < 2 {
            return Err(Error::invalid(
                "latency profiling needs two grid sizes and one repetition",
            ));
        }
        Ok(())
    }
}

const CALIBRATION_QUERIES: usize = 100;

#[derive(Debug, Clone)]
pub struct Engine {
    index: MultiLevelIndex,
    stats: PartitionStats,
    profile: LatencyProfile,
    table: BetaTable,
    config: EngineConfig,
}

impl Engine {
    /// Builds the index, profiles scan latency and fills derived settings.
    pub fn build(store: &VectorStore, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let index = MultiLevelIndex::build(store, &config.build)?;
        let profile = profile_scan_latency(
            index.dim(),
            index.metric(),
            &config.profile.grid,
            config.profile.repetitions,
            config.aps.k,
            config.build.seed,
        )?;
        Self::from_index(index, config, profile, Some(store))
    }

    /// Wraps an existing index. `sample` supplies calibration queries when
    /// the estimator is off and no fixed nprobe is set.
    pub fn from_index(
        index: MultiLevelIndex,
        mut config: EngineConfig,
        profile: LatencyProfile,
        sample_store: Option<&VectorStore>,
    ) -> Result<Self> {
        config.validate()?;
        let mean = index.len() as f64 / index.partition_count(0).max(1) as f64;
        let m = &mut config.maintenance;
        m.max_partition_size
            .get_or_insert(((2.0 * mean).ceil() as usize).max(2));
        m.min_partition_size
            .get_or_insert((m.min_size_fraction * mean) as usize);
        let table = BetaTable::new(Geometry::dim(&index));
        let mut engine = Self {
            index,
            stats: PartitionStats::new(),
            profile,
            table,
            config,
        };
        if !engine.config.use_aps && engine.config.fixed_nprobe.is_none() {
            let store = sample_store.ok_or_else(|| {
                Error::invalid("fixed nprobe needs sample queries or an explicit value")
            })?;
            engine.config.fixed_nprobe = Some(engine.calibrate_nprobe(store)?);
        }
        Ok(engine)
    }

    fn calibrate_nprobe(&self, store: &VectorStore) -> Result<usize> {
        if store.is_empty() {
            return Ok(1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.build.seed);
        let n = CALIBRATION_QUERIES.min(store.len());
        let mut total = 0usize;
        for r in sample(&mut rng, store.len(), n) {
            total += search(&self.index, store.row(r), &self.config.aps, &self.table)?.nprobe;
        }
        Ok(((total as f64 / n as f64).ceil() as usize).max(1))
    }

    pub fn index(&self) -> &MultiLevelIndex {
        &self.index
    }

    pub fn stats(&self) -> &PartitionStats {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut PartitionStats {
        &mut self.stats
    }

    pub fn profile(&self) -> &LatencyProfile {
        &self.profile
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Search settings actually used per query.
    pub fn effective_aps(&self) -> ApsConfig {
        let mut aps = self.config.aps.clone();
        if !self.config.use_aps {
            aps.fixed_nprobe = self.config.fixed_nprobe;
        }
        aps
    }

    pub fn set_recall_target(&mut self, target: f64) -> Result<()> {
        let mut aps = self.config.aps.clone();
        aps.recall_target = target;
        aps.validate()?;
        self.config.aps = aps;
        Ok(())
    }

    /// Answers one query and records the partitions it touched.
    pub fn search(&mut self, q: &[f32]) -> Result<SearchHit> {
        let hit = self.search_frozen(q)?;
        self.stats.record_scan(&hit.scanned);
        Ok(hit)
    }

    /// Answers one query without touching the statistics.
    pub fn search_frozen(&self, q: &[f32]) -> Result<SearchHit> {
        let aps = self.effective_aps();
        let topo = &self.config.topology;
        if topo.is_single() {
            search(&self.index, q, &aps, &self.table)
        } else {
            let job = plan_query(&self.index, q, &aps, &self.table, topo)?;
            execute_parallel(&self.index, &job, &self.table, topo)
        }
    }

    pub fn insert(&mut self, id: VectorId, v: &[f32]) -> Result<()> {
        self.index.insert(id, v).map(|_| ())
    }

    pub fn delete(&mut self, id: VectorId) -> bool {
        self.index.delete(id)
    }

    /// Closes the statistics window and runs the configured policy.
    pub fn maintain(&mut self) -> Result<Vec<ActionRecord>> {
        self.stats.roll_window();
        match self.config.policy {
            MaintenancePolicy::CostModel => maintenance_pass(
                &mut self.index,
                &mut self.stats,
                &self.profile,
                &self.config.maintenance,
            ),
            MaintenancePolicy::SizeThreshold => size_threshold_baseline_pass(
                &mut self.index,
                &mut self.stats,
                &self.config.maintenance,
            ),
            MaintenancePolicy::Disabled => Ok(Vec::new()),
        }
    }

    /// Modeled query cost under the current frequencies.
    pub fn modeled_cost(&self) -> f64 {
        total_cost(&self.index, &self.stats, &self.profile)
    }

    pub fn save_index(&self, path: impl AsRef<Path>) -> Result<()> {
        save_index(path, &self.index)
    }

    /// Loads a snapshot; the engine starts with empty statistics.
    pub fn load(
        path: impl AsRef<Path>,
        config: EngineConfig,
        profile: LatencyProfile,
    ) -> Result<Self> {
        Self::from_index(load_index(path)?, config, profile, None)
    }
}

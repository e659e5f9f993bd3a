//! Adaptive partitioned approximate nearest neighbor search.
//!
//! Vectors are grouped into k-means partitions, optionally stacked into a
//! hierarchy of centroid levels. Queries decide per query how many partitions
//! to scan from a geometric recall estimate, and a maintenance pass splits and
//! merges partitions when a latency cost model says it pays off.
//!
//! ```
//! use adaptive_ivf::{ApsConfig, BuildConfig, Engine, EngineConfig, VectorStore};
//!
//! let data: Vec<f32> = (0..2000).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
//! let store = VectorStore::from_rows(4, data, None).unwrap();
//! let config = EngineConfig {
//!     build: BuildConfig { partitions_per_level: vec![16], ..Default::default() },
//!     aps: ApsConfig { k: 5, recall_target: 0.9, ..Default::default() },
//!     ..Default::default()
//! };
//! let mut engine = Engine::build(&store, config).unwrap();
//! let hits = engine.search(store.row(0)).unwrap();
//! assert_eq!(hits.result.ids[0], 0);
//! ```

// Negated float comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aps;
pub mod clustering;
pub mod engine;
mod error;
pub mod executor;
pub mod index;
pub mod io;
pub mod kernels;
pub mod maintenance;
pub mod persist;
pub mod special;
pub mod stats;
pub mod store;
pub mod workload;

pub use aps::{ApsConfig, BetaTable, SearchOutcome};
pub use clustering::{kmeans, split_partition, Clustering, KMeansConfig, SplitOutcome};
pub use engine::{Engine, EngineConfig, MaintenancePolicy, ProfileSettings, SearchHit};
pub use error::{Error, Result};
pub use executor::NodeTopology;
pub use index::{BuildConfig, MultiLevelIndex, PartitionId};
pub use kernels::{brute_force_knn, recall_at_k, KnnResult, Metric, TopKBuffer, VectorId};
pub use maintenance::{ActionRecord, LatencyProfile, MaintenanceConfig};
pub use stats::PartitionStats;
pub use store::VectorStore;
pub use workload::{generate_trace, replay, ReplayConfig, RunMetrics, Trace, WorkloadSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/index-structure.md")]
    mod index_structure {}
    #[doc = include_str!("../../../book/src/recall-estimation.md")]
    mod recall_estimation {}
    #[doc = include_str!("../../../book/src/cost-model.md")]
    mod cost_model {}
    #[doc = include_str!("../../../book/src/parallel.md")]
    mod parallel {}
    #[doc = include_str!("../../../book/src/workloads.md")]
    mod workloads {}
}

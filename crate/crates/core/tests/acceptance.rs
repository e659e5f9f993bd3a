//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines always print.
//! Exits nonzero if any criterion fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use adaptive_ivf::aps::{cap_volume_fraction, search, ApsConfig, BetaTable};
use adaptive_ivf::clustering::{SplitHalf, SplitOutcome};
use adaptive_ivf::engine::{Engine, EngineConfig, MaintenancePolicy, ProfileSettings};
use adaptive_ivf::executor::{execute_parallel, execute_single, plan_query, NodeTopology};
use adaptive_ivf::index::{BuildConfig, MultiLevelIndex, PartitionId};
use adaptive_ivf::kernels::{brute_force_knn, recall_at_k, KnnResult, Metric};
use adaptive_ivf::maintenance::{
    apply_action, estimate_split_delta, maintenance_pass, maintenance_pass_with,
    profile_scan_latency, ActionKind, Decision, LatencyProfile, MaintenanceConfig,
};
use adaptive_ivf::special::beta_reg;
use adaptive_ivf::stats::PartitionStats;
use adaptive_ivf::store::VectorStore;
use adaptive_ivf::workload::{generate_trace, replay, ReplayConfig, WorkloadSpec};
use adaptive_ivf::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};

const DIM: usize = 32;
const N: usize = 100_000;
const CLUSTERS: usize = 1000;
const QUERIES: usize = 1000;
const K: usize = 100;
/// Per-dimension cluster spread around N(0, I) centers.
const SIGMA: f32 = 0.875;
const US: f64 = 1e-6;

type Outcome = std::result::Result<String, String>;

/// 100k clustered vectors, 1000 held-out queries, exact top-100, and a
/// 1000-partition index.
struct Fixture {
    centers: Vec<Vec<f32>>,
    queries: Vec<f32>,
    truth: Vec<KnnResult>,
    index: MultiLevelIndex,
    table: BetaTable,
}

impl Fixture {
    fn build() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let centers: Vec<Vec<f32>> = (0..CLUSTERS)
            .map(|_| (0..DIM).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let point = |rng: &mut ChaCha8Rng, c: &[f32]| -> Vec<f32> {
            c.iter()
                .map(|x| {
                    let z: f32 = StandardNormal.sample(rng);
                    x + z * SIGMA
                })
                .collect()
        };
        let sample = |rng: &mut ChaCha8Rng| {
            let c = rng.random_range(0..CLUSTERS);
            point(rng, &centers[c])
        };
        let data: Vec<f32> = (0..N).flat_map(|_| sample(&mut rng)).collect();
        let queries: Vec<f32> = (0..QUERIES).flat_map(|_| sample(&mut rng)).collect();
        let store = VectorStore::from_rows(DIM, data, None).unwrap();
        let truth = brute_force_knn(&queries, &store, K, Metric::L2).unwrap();
        let index = MultiLevelIndex::build(
            &store,
            &BuildConfig {
                partitions_per_level: vec![1000],
                ..Default::default()
            },
        )
        .unwrap();
        Self {
            centers,
            queries,
            truth,
            index,
            table: BetaTable::new(DIM),
        }
    }

    fn query(&self, i: usize) -> &[f32] {
        &self.queries[i * DIM..(i + 1) * DIM]
    }
}

#[derive(Debug, Clone, Copy)]
struct Sweep {
    recall: f64,
    nprobe: f64,
    recomputes: usize,
}

fn sweep(index: &MultiLevelIndex, fx: &Fixture, config: &ApsConfig) -> Sweep {
    let (mut recall, mut nprobe, mut recomputes) = (0.0, 0.0, 0);
    for i in 0..QUERIES {
        let out = search(index, fx.query(i), config, &fx.table).unwrap();
        recall += recall_at_k(&out.result, &fx.truth[i]);
        nprobe += out.nprobe as f64;
        recomputes += out.recomputes;
    }
    Sweep {
        recall: recall / QUERIES as f64,
        nprobe: nprobe / QUERIES as f64,
        recomputes,
    }
}

fn aps(target: f64) -> ApsConfig {
    ApsConfig {
        k: K,
        recall_target: target,
        ..Default::default()
    }
}

fn verdict(pass: bool, detail: String) -> Outcome {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn worked_example() -> Outcome {
    let mut data = Vec::new();
    for i in 0..1000 {
        let x = if i < 500 { 0.0 } else { 1000.0 };
        data.extend([x + (i % 500) as f32 * 1e-3, 0.0]);
    }
    let store = VectorStore::from_rows(2, data, None).unwrap();
    let mut index = MultiLevelIndex::build(
        &store,
        &BuildConfig {
            partitions_per_level: vec![2],
            ..Default::default()
        },
    )
    .unwrap();
    let mut pids = index.partition_ids(0);
    pids.sort_by(|a, b| {
        index.centroid(0, *a).unwrap()[0].total_cmp(&index.centroid(0, *b).unwrap()[0])
    });
    let (p1, p2) = (pids[0], pids[1]);
    // lambda(2) = 10us and lambda(3) = 70us put the extra centroid at 60us.
    let profile = LatencyProfile::new(
        vec![2.0, 4.0, 50.0, 250.0, 450.0, 500.0],
        vec![
            10.0 * US,
            130.0 * US,
            250.0 * US,
            550.0 * US,
            1050.0 * US,
            1200.0 * US,
        ],
    )
    .unwrap();
    let mut stats = PartitionStats::new();
    stats.set_frequency(0, p1, 0.10);
    stats.set_frequency(0, p2, 0.10);
    stats.set_frequency(1, index.root_id(), 1.0);
    let est = [p1, p2].map(|p| estimate_split_delta(&index, &stats, &profile, 0, p, 0.5));
    let config = MaintenanceConfig {
        tau: 4.0 * US,
        alpha: 0.5,
        refine: false,
        ..Default::default()
    };
    let mut splitter = |v: &[f32], dim: usize, _: u64| -> Result<SplitOutcome> {
        let n = v.len() / dim;
        let cut = if v[0] < 500.0 { 250 } else { 450 };
        let half = |rows: Vec<usize>| SplitHalf {
            centroid: v[rows[0] * dim..rows[0] * dim + dim].to_vec(),
            members: rows,
        };
        Ok(SplitOutcome::Split {
            left: half((0..cut).collect()),
            right: half((cut..n).collect()),
        })
    };
    let records = maintenance_pass_with(&mut index, &mut stats, &profile, &config, &mut splitter)
        .map_err(|e| e.to_string())?;
    let find = |p: PartitionId| records.iter().find(|r| r.partition == Some(p));
    let (r1, r2) = (
        find(p1).ok_or("no P1 record")?,
        find(p2).ok_or("no P2 record")?,
    );
    let exact = |x: f64, want: f64| (x - want).abs() < 1e-12;
    let pass = est.iter().all(|e| exact(*e, -5.0 * US))
        && exact(r1.verified_delta.unwrap(), -5.0 * US)
        && r1.decision == Decision::Commit
        && exact(r2.verified_delta.unwrap(), 5.0 * US)
        && r2.decision == Decision::Reject;
    verdict(
        pass,
        format!(
            "estimates {:.3}/{:.3} us, P1 {:.3} us {:?}, P2 {:.3} us {:?}",
            est[0] / US,
            est[1] / US,
            r1.verified_delta.unwrap() / US,
            r1.decision,
            r2.verified_delta.unwrap() / US,
            r2.decision
        ),
    )
}

fn target_tracking(sweeps: &[(f64, Sweep)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &(t, s) in sweeps.iter().filter(|(t, _)| *t < 0.95) {
        pass &= s.recall >= t - 0.02 && s.recall <= t + 0.08;
        parts.push(format!("target {t:.2} -> recall {:.4}", s.recall));
    }
    verdict(pass, parts.join(", "))
}

fn nprobe_monotone(sweeps: &[(f64, Sweep)]) -> Outcome {
    let np: Vec<f64> = sweeps.iter().map(|(_, s)| s.nprobe).collect();
    let pass = np.windows(2).all(|w| w[0] < w[1]);
    verdict(
        pass,
        format!(
            "mean nprobe {:.1} / {:.1} / {:.1} at 0.80 / 0.90 / 0.99",
            np[0], np[1], np[2]
        ),
    )
}

fn cap_volume_oracle() -> Outcome {
    const SAMPLES: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_mc: f64 = 0.0;
    for d in [2usize, 4, 8, 16] {
        let table = BetaTable::new(d);
        let rho: f64 = rng.random_range(0.5..3.0);
        let ts: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..rho)).collect();
        // Uniform points in the radius-rho ball; keep each one's first
        // coordinate and count how many land beyond each hyperplane.
        let mut first = Vec::with_capacity(SAMPLES);
        let mut g = vec![0.0f64; d];
        for _ in 0..SAMPLES {
            for x in g.iter_mut() {
                *x = StandardNormal.sample(&mut rng);
            }
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let r = rho * rng.random::<f64>().powf(1.0 / d as f64);
            first.push(g[0] / norm * r);
        }
        for &t in &ts {
            let mc = first.iter().filter(|&&x| x > t).count() as f64 / SAMPLES as f64;
            let v = cap_volume_fraction(t, rho, &table).map_err(|e| e.to_string())?;
            worst_mc = worst_mc.max((v - mc).abs());
        }
    }
    let mut worst_table: f64 = 0.0;
    for d in [2usize, 3, 4, 8, 16, 32, 64, 128, 256] {
        let table = BetaTable::new(d);
        let a = (d as f64 + 1.0) / 2.0;
        for i in 0..=20_000 {
            let x = i as f64 / 20_000.0;
            let reference = statrs::function::beta::beta_reg(a, 0.5, x);
            worst_table = worst_table.max((table.regularized(x) - reference).abs());
            worst_table = worst_table.max((beta_reg(a, 0.5, x) - reference).abs());
        }
    }
    verdict(
        worst_mc < 0.01 && worst_table < 1e-3,
        format!(
            "max |cap - MC| = {worst_mc:.2e} over 80 cases, max table error = {worst_table:.2e}"
        ),
    )
}

/// 100k vectors drawn Zipf-skewed over the fixture clusters, indexed with
/// 100 partitions, plus rolled statistics from queries with the same skew.
fn skewed_instance(fx: &Fixture) -> (MultiLevelIndex, PartitionStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let zipf = Zipf::new(CLUSTERS as f64, 1.0).unwrap();
    let mut ranks: Vec<usize> = (0..CLUSTERS).collect();
    ranks.shuffle(&mut rng);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        let c = ranks[zipf.sample(rng) as usize - 1];
        fx.centers[c]
            .iter()
            .map(|x| {
                let z: f32 = StandardNormal.sample(rng);
                x + z * SIGMA
            })
            .collect()
    };
    let data: Vec<f32> = (0..N).flat_map(|_| draw(&mut rng)).collect();
    let store = VectorStore::from_rows(DIM, data, None).unwrap();
    let index = MultiLevelIndex::build(
        &store,
        &BuildConfig {
            partitions_per_level: vec![100],
            ..Default::default()
        },
    )
    .unwrap();
    let config = aps(0.9);
    let mut stats = PartitionStats::new();
    for _ in 0..3000 {
        let out = search(&index, &draw(&mut rng), &config, &fx.table).unwrap();
        stats.record_scan(&out.scanned);
    }
    stats.roll_window();
    (index, stats)
}

fn maintenance_soundness(fx: &Fixture, profile: &LatencyProfile) -> Outcome {
    let config = MaintenanceConfig::default();
    let tau = config.tau;
    let (base_index, base_stats) = skewed_instance(fx);

    // (b) Every partition, both actions, applied directly: each rejection
    // must leave index and stats exactly as they were.
    let mut index = base_index.clone();
    let mut stats = base_stats.clone();
    let metric = index.metric();
    let mut splitter =
        |v: &[f32], dim: usize, seed: u64| adaptive_ivf::split_partition(v, dim, seed, metric);
    let (mut rejected, mut restored, mut commits_b, mut unsound) =
        ([0usize; 2], 0usize, 0usize, 0usize);
    let pids = index.partition_ids(0);
    for pid in pids {
        for (slot, kind) in [ActionKind::Split, ActionKind::Merge]
            .into_iter()
            .enumerate()
        {
            if index.partition(0, pid).is_none()
                || (kind == ActionKind::Split && index.partition_size(0, pid) < 2)
            {
                continue;
            }
            let (before, before_stats) = (index.clone(), stats.clone());
            let rec = apply_action(
                &mut index,
                &mut stats,
                profile,
                &config,
                kind,
                0,
                pid,
                &mut splitter,
            )
            .map_err(|e| e.to_string())?;
            match rec.decision {
                Decision::Reject => {
                    rejected[slot] += 1;
                    if index == before && stats == before_stats {
                        restored += 1;
                    }
                }
                Decision::Commit => {
                    commits_b += 1;
                    if rec.observed_delta.unwrap() >= -tau || rec.observed_delta.unwrap().is_nan() {
                        unsound += 1;
                    }
                }
            }
        }
    }
    let part_b = rejected.iter().all(|&r| r > 0) && restored == rejected[0] + rejected[1];

    // (a) + (c) Frozen-stats passes until nothing commits.
    let mut index = base_index;
    let mut stats = base_stats;
    let mut passes = 0;
    let mut commits = 0;
    let mut max_gap: f64 = 0.0;
    let ids_before = index.vector_ids();
    let fixed_point = loop {
        if passes == 50 {
            break false;
        }
        passes += 1;
        let records = maintenance_pass(&mut index, &mut stats, profile, &config)
            .map_err(|e| e.to_string())?;
        let committed: Vec<_> = records
            .iter()
            .filter(|r| r.decision == Decision::Commit)
            .collect();
        for r in &committed {
            if let (Some(obs), Some(ver)) = (r.observed_delta, r.verified_delta) {
                if obs >= -tau || obs.is_nan() {
                    unsound += 1;
                }
                max_gap = max_gap.max((obs - ver).abs());
            }
        }
        commits += committed.len();
        if committed.is_empty() {
            break true;
        }
    };
    index.check_invariants().map_err(|e| e.to_string())?;
    let conserved = index.vector_ids() == ids_before;
    verdict(
        part_b && unsound == 0 && fixed_point && conserved,
        format!(
            "(a) {} commits, 0 allowed unsound, found {unsound}, max |observed - verified| = {max_gap:.1e} s; \
             (b) {}/{} rejections restored exactly ({} split, {} merge; {commits_b} direct commits); \
             (c) zero-commit pass reached: {fixed_point} after {passes} passes; ids conserved: {conserved}",
            commits,
            restored,
            rejected[0] + rejected[1],
            rejected[0],
            rejected[1],
        ),
    )
}

/// Rows drawn from the fixture's generative model, for traces that need
/// more data than the fixture holds.
fn pool(fx: &Fixture, n: usize, seed: u64) -> VectorStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * DIM);
    for _ in 0..n {
        let c = &fx.centers[rng.random_range(0..CLUSTERS)];
        data.extend(c.iter().map(|x| {
            let z: f32 = StandardNormal.sample(&mut rng);
            x + z * SIGMA
        }));
    }
    VectorStore::from_rows(DIM, data, None).unwrap()
}

fn maintenance_benefit(fx: &Fixture, profile: &LatencyProfile) -> Outcome {
    // Hot regions can only grow if the pool holds more than the final size.
    let source = pool(fx, 300_000, 6);
    let spec = WorkloadSpec {
        initial_size: 10_000,
        operations: 100,
        vectors_per_op: 1000,
        queries_per_op: 100,
        query_fraction: 0.1,
        insert_fraction: 0.9,
        delete_fraction: 0.0,
        clusters: 20,
        skew: 1.2,
        maintain_every: 1,
        seed: 6,
        k: K,
        recall_target: 0.9,
        ..Default::default()
    };
    let trace = generate_trace(&source, Metric::L2, &spec).map_err(|e| e.to_string())?;
    let run = |policy: MaintenancePolicy, use_aps: bool| -> Result<adaptive_ivf::RunMetrics> {
        let config = EngineConfig {
            build: BuildConfig {
                partitions_per_level: vec![100],
                ..Default::default()
            },
            // No candidate cap: both arms must actually reach the target.
            aps: ApsConfig {
                initial_fraction: 1.0,
                ..aps(0.9)
            },
            policy,
            use_aps,
            profile: ProfileSettings::default(),
            ..Default::default()
        };
        let index = MultiLevelIndex::build(&trace.initial, &config.build)?;
        let mut engine = Engine::from_index(index, config, profile.clone(), Some(&trace.initial))?;
        replay(
            &trace,
            &mut engine,
            &ReplayConfig {
                maintenance: policy != MaintenancePolicy::Disabled,
                ..Default::default()
            },
        )
    };
    // Decisions are deterministic, only the clock is not: replay each arm
    // three times, interleaved, and keep every query's fastest time.
    let mut with = Vec::new();
    let mut without = Vec::new();
    for _ in 0..3 {
        with.push(run(MaintenancePolicy::CostModel, true).map_err(|e| e.to_string())?);
        without.push(run(MaintenancePolicy::Disabled, true).map_err(|e| e.to_string())?);
    }
    let last_decile = |runs: &[adaptive_ivf::RunMetrics]| {
        let lat: Vec<f64> = (0..runs[0].query_latencies().len())
            .map(|i| {
                runs.iter()
                    .map(|m| m.query_latencies()[i])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let tail = &lat[lat.len() - lat.len() / 10..];
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    let (lw, lo) = (last_decile(&with), last_decile(&without));
    let (with, without) = (&with[0], &without[0]);
    let fixed = run(MaintenancePolicy::CostModel, false).map_err(|e| e.to_string())?;
    let (sw, so, sf) = (with.summary(), without.summary(), fixed.summary());
    verdict(
        lw < lo && sw.recall_std < sf.recall_std,
        format!(
            "final-decile latency {:.3} ms with maintenance vs {:.3} ms without ({} vs {} partitions, recall {:.3} vs {:.3}); \
             recall std {:.4} (mean {:.3}) adaptive vs {:.4} (mean {:.3}) fixed nprobe",
            lw * 1e3,
            lo * 1e3,
            sw.final_partitions,
            so.final_partitions,
            sw.mean_recall,
            so.mean_recall,
            sw.recall_std,
            sw.mean_recall,
            sf.recall_std,
            sf.mean_recall
        ),
    )
}

fn multi_level(fx: &Fixture, single: Sweep) -> Outcome {
    let mut two = fx.index.clone();
    two.add_level(32, 7).map_err(|e| e.to_string())?;
    let high = sweep(&two, fx, &aps(0.9));
    let low = sweep(
        &two,
        fx,
        &ApsConfig {
            upper_recall_target: 0.8,
            ..aps(0.9)
        },
    );
    // A drop of at least one point counts as measurable.
    verdict(
        (high.recall - single.recall).abs() <= 0.02 && high.recall - low.recall >= 0.01,
        format!(
            "single-level {:.4}, two-level {:.4} at upper 0.99, {:.4} at upper 0.80",
            single.recall, high.recall, low.recall
        ),
    )
}

fn executor_equivalence(fx: &Fixture) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let picks = rand::seq::index::sample(&mut rng, QUERIES, 100).into_vec();
    let topologies = [(1, 1), (1, 2), (1, 4), (1, 8), (2, 1), (2, 2), (2, 4)];
    let mut mismatches = 0;
    let mut worst = f64::INFINITY;
    for (nodes, workers) in topologies {
        let topo = NodeTopology::new(nodes, workers).unwrap();
        let (mut single_recall, mut par_recall) = (0.0, 0.0);
        for &i in &picks {
            let q = fx.query(i);
            let full = plan_query(&fx.index, q, &aps(1.0), &fx.table, &topo).unwrap();
            let par =
                execute_parallel(&fx.index, &full, &fx.table, &topo).map_err(|e| e.to_string())?;
            let single = execute_single(&fx.index, &full, &fx.table);
            let a: HashSet<u64> = par.result.ids.iter().copied().collect();
            let b: HashSet<u64> = single.result.ids.iter().copied().collect();
            if a != b {
                mismatches += 1;
            }
            let job = plan_query(&fx.index, q, &aps(0.9), &fx.table, &topo).unwrap();
            let par =
                execute_parallel(&fx.index, &job, &fx.table, &topo).map_err(|e| e.to_string())?;
            let single = execute_single(&fx.index, &job, &fx.table);
            par_recall += recall_at_k(&par.result, &fx.truth[i]);
            single_recall += recall_at_k(&single.result, &fx.truth[i]);
        }
        worst = worst.min((par_recall - single_recall) / picks.len() as f64);
    }
    verdict(
        mismatches == 0 && worst >= -0.01,
        format!(
            "{mismatches} exhaustive id-set mismatches over {} topologies x 100 queries; \
             worst parallel - single mean recall with termination {worst:+.4}",
            topologies.len()
        ),
    )
}

fn recompute_threshold(fx: &Fixture, thresholded: Sweep) -> Outcome {
    let always = sweep(
        &fx.index,
        fx,
        &ApsConfig {
            recompute_always: true,
            ..aps(0.9)
        },
    );
    verdict(
        (thresholded.recall - always.recall).abs() <= 0.002
            && thresholded.recomputes < always.recomputes,
        format!(
            "recall {:.4} (1% threshold) vs {:.4} (always); recomputes {} vs {}",
            thresholded.recall, always.recall, thresholded.recomputes, always.recomputes
        ),
    )
}

fn conservation_fuzz(profile: &LatencyProfile) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dim = 8;
    let centers: Vec<Vec<f32>> = (0..20)
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let fresh = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        let c = &centers[rng.random_range(0..centers.len())];
        c.iter()
            .map(|x| x + rng.random_range(-1.0..1.0f32))
            .collect()
    };
    let data: Vec<f32> = (0..3000).flat_map(|_| fresh(&mut rng)).collect();
    let store = VectorStore::from_rows(dim, data, None).unwrap();
    let mut index = MultiLevelIndex::build(
        &store,
        &BuildConfig {
            partitions_per_level: vec![40],
            ..Default::default()
        },
    )
    .unwrap();
    let table = BetaTable::new(dim);
    let config = MaintenanceConfig {
        tau: 0.0,
        add_level_threshold: 60,
        remove_level_threshold: 10,
        refine_radius: 8,
        ..Default::default()
    };
    let search_cfg = ApsConfig {
        k: 10,
        ..Default::default()
    };
    let mut live: HashSet<u64> = store.ids().iter().copied().collect();
    let mut order: Vec<u64> = live.iter().copied().collect();
    order.sort_unstable();
    let mut next_id = 3000u64;
    let mut stats = PartitionStats::new();
    let (mut maintains, mut actions, mut max_levels) = (0, 0, 1);
    for step in 0..10_000 {
        let roll: f64 = rng.random();
        if roll < 0.45 {
            let v = fresh(&mut rng);
            index.insert(next_id, &v).map_err(|e| e.to_string())?;
            live.insert(next_id);
            order.push(next_id);
            next_id += 1;
        } else if roll < 0.80 && live.len() > 200 {
            let i = rng.random_range(0..order.len());
            let id = order.swap_remove(i);
            if !index.delete(id) || !live.remove(&id) {
                return Err(format!("step {step}: delete of live id {id} failed"));
            }
        } else if roll < 0.97 {
            let q = fresh(&mut rng);
            let out = search(&index, &q, &search_cfg, &table).map_err(|e| e.to_string())?;
            stats.record_scan(&out.scanned);
        } else {
            stats.roll_window();
            let records = maintenance_pass(&mut index, &mut stats, profile, &config)
                .map_err(|e| format!("step {step}: {e}"))?;
            actions += records
                .iter()
                .filter(|r| r.decision == Decision::Commit)
                .count();
            maintains += 1;
            max_levels = max_levels.max(index.num_levels());
        }
        if step % 10 == 0 || roll >= 0.97 {
            index
                .check_invariants()
                .map_err(|e| format!("step {step}: {e}"))?;
            if index.vector_ids() != live {
                return Err(format!("step {step}: id set diverged from the oracle"));
            }
        }
    }
    index.check_invariants().map_err(|e| e.to_string())?;
    verdict(
        index.vector_ids() == live,
        format!(
            "10000 steps, {maintains} maintenance passes, {actions} committed actions, up to {max_levels} levels, \
             {} live ids consistent",
            live.len()
        ),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id}] {name}: {detail} ({secs:.1} s)"),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{id}] {name}: {detail} ({secs:.1} s)");
            }
        }
    };

    report(1, "worked split example", &mut worked_example);

    let start = Instant::now();
    let fx = Fixture::build();
    let profile =
        profile_scan_latency(DIM, Metric::L2, &ProfileSettings::default().grid, 9, K, 42).unwrap();
    println!(
        "fixture: {N} x {DIM}, {CLUSTERS} clusters, {QUERIES} queries ({:.1} s)",
        start.elapsed().as_secs_f64()
    );

    let sweeps: Vec<(f64, Sweep)> = [0.8, 0.9, 0.99]
        .into_iter()
        .map(|t| (t, sweep(&fx.index, &fx, &aps(t))))
        .collect();
    report(2, "recall target tracking", &mut || {
        target_tracking(&sweeps)
    });
    report(3, "nprobe monotone in target", &mut || {
        nprobe_monotone(&sweeps)
    });
    report(4, "cap volume oracle", &mut cap_volume_oracle);
    report(5, "maintenance soundness", &mut || {
        maintenance_soundness(&fx, &profile)
    });
    report(6, "maintenance benefit direction", &mut || {
        maintenance_benefit(&fx, &profile)
    });
    report(7, "multi-level fidelity", &mut || {
        multi_level(&fx, sweeps[1].1)
    });
    report(8, "executor equivalence", &mut || executor_equivalence(&fx));
    report(9, "recompute threshold", &mut || {
        recompute_threshold(&fx, sweeps[1].1)
    });
    report(10, "conservation fuzz", &mut || conservation_fuzz(&profile));

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

use adaptive_ivf::kernels::Metric;
use adaptive_ivf::workload::{generate_trace, Operation, WorkloadSpec};
use adaptive_ivf::VectorStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn blobs(n: usize, dim: usize, centers: usize, seed: u64) -> VectorStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<Vec<f32>> = (0..centers)
        .map(|_| (0..dim).map(|_| rng.random_range(-20.0..20.0)).collect())
        .collect();
    let data = (0..n)
        .flat_map(|i| {
            let center = &c[i % centers];
            center
                .iter()
                .map(|x| x + rng.random_range(-0.5..0.5))
                .collect::<Vec<f32>>()
        })
        .collect();
    VectorStore::from_rows(dim, data, None).unwrap()
}

fn cluster_hits(spec: &WorkloadSpec, store: &VectorStore) -> Vec<u64> {
    let trace = generate_trace(store, Metric::L2, spec).unwrap();
    let mut hits = vec![0u64; spec.clusters];
    for op in &trace.ops {
        if let Operation::Query { clusters, .. } = op {
            for &c in clusters {
                hits[c] += 1;
            }
        }
    }
    hits
}

#[test]
fn zero_skew_queries_are_uniform_over_clusters() {
    let store = blobs(4000, 8, 20, 3);
    let spec = WorkloadSpec {
        initial_size: 1000,
        operations: 50,
        queries_per_op: 200,
        query_fraction: 1.0,
        insert_fraction: 0.0,
        delete_fraction: 0.0,
        clusters: 20,
        skew: 0.0,
        maintain_every: 0,
        seed: 11,
        k: 10,
        ..Default::default()
    };
    let hits = cluster_hits(&spec, &store);
    let total: u64 = hits.iter().sum();
    assert_eq!(total, 10_000);
    let expected = total as f64 / hits.len() as f64;
    let chi2: f64 = hits
        .iter()
        .map(|&h| (h as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new((hits.len() - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2:.1}, p {p:.4}, hits {hits:?}");
}

#[test]
fn skewed_queries_concentrate() {
    let store = blobs(4000, 8, 20, 3);
    let spec = WorkloadSpec {
        initial_size: 1000,
        operations: 20,
        queries_per_op: 200,
        query_fraction: 1.0,
        insert_fraction: 0.0,
        delete_fraction: 0.0,
        clusters: 20,
        skew: 1.5,
        maintain_every: 0,
        seed: 11,
        k: 10,
        ..Default::default()
    };
    let mut hits = cluster_hits(&spec, &store);
    hits.sort_unstable_by(|a, b| b.cmp(a));
    let total: u64 = hits.iter().sum();
    // Zipf(1.5) over 20 ranks puts ~43% of the mass on the top rank.
    assert!(hits[0] as f64 > 0.35 * total as f64, "{hits:?}");
    assert!(hits[0] > 10 * hits[19].max(1), "{hits:?}");
}

#[test]
fn same_seed_same_trace() {
    let store = blobs(3000, 8, 10, 5);
    let spec = WorkloadSpec {
        initial_size: 500,
        operations: 12,
        vectors_per_op: 100,
        queries_per_op: 10,
        query_fraction: 0.5,
        insert_fraction: 0.3,
        delete_fraction: 0.2,
        clusters: 10,
        seed: 9,
        k: 10,
        ..Default::default()
    };
    let a = generate_trace(&store, Metric::L2, &spec).unwrap();
    let b = generate_trace(&store, Metric::L2, &spec).unwrap();
    let mut ja = Vec::new();
    let mut jb = Vec::new();
    adaptive_ivf::workload::write_trace_to(&mut ja, &a).unwrap();
    adaptive_ivf::workload::write_trace_to(&mut jb, &b).unwrap();
    assert_eq!(ja, jb);
    let other = generate_trace(&store, Metric::L2, &WorkloadSpec { seed: 10, ..spec }).unwrap();
    let mut jc = Vec::new();
    adaptive_ivf::workload::write_trace_to(&mut jc, &other).unwrap();
    assert_ne!(ja, jc);
}

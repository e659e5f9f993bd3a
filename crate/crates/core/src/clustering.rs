//! k-means training, two-way partition splits and neighborhood refinement.
//!
//! All clustering geometry is Euclidean, including for inner-product indexes:
//! centroids are arithmetic means and points go to their L2-nearest centroid.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::index::{MultiLevelIndex, PartitionId};
use crate::kernels::{l2_sq, Metric};

/// Lloyd iterations used when splitting a single partition in two.
pub const SPLIT_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub n_clusters: usize,
    pub n_iters: usize,
    pub seed: u64,
    /// Scoring metric of the index being built. Training is always L2.
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub dim: usize,
    /// Row-major `n_clusters × dim`.
    pub centroids: Vec<f32>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids, recorded after the
    /// initial assignment and after every iteration.
    pub objective: Vec<f64>,
    /// Set when fewer distinct points than requested clusters existed.
    pub reduced_from: Option<usize>,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn final_objective(&self) -> f64 {
        self.objective.last().copied().unwrap_or(0.0)
    }
}

fn validate_points(points: &[f32], dim: usize) -> Result<usize> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !points.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: points.len() % dim,
        });
    }
    Ok(points.len() / dim)
}

/// Counts distinct rows, stopping early once `limit` is reached.
fn distinct_rows(points: &[f32], dim: usize, limit: usize) -> usize {
    let bits: Vec<u32> = points.iter().map(|x| x.to_bits()).collect();
    let mut seen: HashSet<&[u32]> = HashSet::new();
    for row in bits.chunks_exact(dim) {
        seen.insert(row);
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

/// k-means with k-means++ seeding and farthest-point empty-cluster repair.
///
/// Deterministic for a given seed. If there are fewer distinct points than
/// `n_clusters`, the cluster count is reduced and `reduced_from` records the
/// original request.
pub fn kmeans(points: &[f32], dim: usize, config: &KMeansConfig) -> Result<Clustering> {
    let n = validate_points(points, dim)?;
    if n == 0 {
        return Err(Error::invalid("k-means over zero points"));
    }
    if config.n_clusters == 0 {
        return Err(Error::invalid("n_clusters must be positive"));
    }
    let distinct = distinct_rows(points, dim, config.n_clusters);
    let k = config.n_clusters.min(distinct);
    let reduced_from = (k < config.n_clusters).then_some(config.n_clusters);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = kmeans_plus_plus(points, dim, k, &mut rng);
    let mut out = lloyd(points, dim, init, config.n_iters);
    out.reduced_from = reduced_from;
    Ok(out)
}

fn kmeans_plus_plus(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut min_d2: Vec<f64> = (0..n).map(|i| l2_sq(row(i), row(first)) as f64).collect();
    while centroids.len() < k * dim {
        let total: f64 = min_d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in min_d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            pick = Some(i);
            if target < w {
                break;
            }
            target -= w;
        }
        let pick = pick.expect("positive total weight");
        let c = row(pick).to_vec();
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = l2_sq(row(i), &c) as f64;
            if nd < *d {
                *d = nd;
            }
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Nearest centroid per point, with lowest index winning ties.
fn assign(points: &[f32], dim: usize, centroids: &[f32]) -> (Vec<usize>, Vec<f32>) {
    let n = points.len() / dim;
    let mut assignments = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    for p in points.chunks_exact(dim) {
        let mut best = (f32::INFINITY, 0usize);
        for (c, cv) in centroids.chunks_exact(dim).enumerate() {
            let d = l2_sq(p, cv);
            if d < best.0 {
                best = (d, c);
            }
        }
        assignments.push(best.1);
        dists.push(best.0);
    }
    (assignments, dists)
}

/// Runs `n_iters` Lloyd iterations from the given initial centroids.
fn lloyd(points: &[f32], dim: usize, mut centroids: Vec<f32>, n_iters: usize) -> Clustering {
    let k = centroids.len() / dim;
    let (mut assignments, dists) = assign(points, dim, &centroids);
    let mut objective = vec![dists.iter().map(|&d| d as f64).sum::<f64>()];

    for _ in 0..n_iters {
        // Update step.
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.chunks_exact(dim).zip(&assignments) {
            counts[a] += 1;
            for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            }
        }

        let mut repaired = false;
        if counts.contains(&0) {
            // Reseed each empty cluster with the point farthest from its centroid.
            let mut own: Vec<f32> = points
                .chunks_exact(dim)
                .zip(&assignments)
                .map(|(p, &a)| l2_sq(p, &centroids[a * dim..(a + 1) * dim]))
                .collect();
            for c in 0..k {
                if counts[c] > 0 {
                    continue;
                }
                let (far, &d) = own
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .expect("nonempty points");
                if d <= 0.0 {
                    break;
                }
                let p = &points[far * dim..(far + 1) * dim];
                centroids[c * dim..(c + 1) * dim].copy_from_slice(p);
                counts[assignments[far]] -= 1;
                assignments[far] = c;
                counts[c] = 1;
                own[far] = 0.0;
                repaired = true;
            }
        }

        let (next, dists) = assign(points, dim, &centroids);
        let changed = next != assignments;
        assignments = next;
        objective.push(dists.iter().map(|&d| d as f64).sum());
        if !changed && !repaired {
            break;
        }
    }

    Clustering {
        dim,
        centroids,
        assignments,
        objective,
        reduced_from: None,
    }
}

/// k-means seeded with explicit centroids rather than k-means++.
///
/// With `n_iters == 0` this is a pure nearest-centroid reassignment.
pub fn seeded_kmeans(
    points: &[f32],
    dim: usize,
    seeds: &[f32],
    n_iters: usize,
) -> Result<Clustering> {
    validate_points(points, dim)?;
    if seeds.is_empty() || !seeds.len().is_multiple_of(dim) {
        return Err(Error::invalid("seed centroids must be a nonempty matrix"));
    }
    Ok(lloyd(points, dim, seeds.to_vec(), n_iters))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitHalf {
    pub centroid: Vec<f32>,
    /// Row indices into the input block.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitOutcome {
    Split {
        left: SplitHalf,
        right: SplitHalf,
    },
    /// Fewer than two distinct vectors.
    CannotSplit,
}

/// Two-way k-means over one partition's vectors.
///
/// The halves follow the data's natural modes; sizes are not balanced.
pub fn split_partition(
    vectors: &[f32],
    dim: usize,
    seed: u64,
    metric: Metric,
) -> Result<SplitOutcome> {
    let n = validate_points(vectors, dim)?;
    if n < 2 || distinct_rows(vectors, dim, 2) < 2 {
        return Ok(SplitOutcome::CannotSplit);
    }
    let c = kmeans(
        vectors,
        dim,
        &KMeansConfig {
            n_clusters: 2,
            n_iters: SPLIT_ITERS,
            seed,
            metric,
        },
    )?;
    let mut halves = [Vec::new(), Vec::new()];
    for (i, &a) in c.assignments.iter().enumerate() {
        halves[a].push(i);
    }
    if halves[0].is_empty() || halves[1].is_empty() {
        return Ok(SplitOutcome::CannotSplit);
    }
    let [l, r] = halves;
    Ok(SplitOutcome::Split {
        left: SplitHalf {
            centroid: c.centroid(0).to_vec(),
            members: l,
        },
        right: SplitHalf {
            centroid: c.centroid(1).to_vec(),
            members: r,
        },
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineSummary {
    /// Partitions in the refined neighborhood.
    pub partitions: Vec<PartitionId>,
    pub vectors: usize,
    /// Vectors whose partition changed.
    pub moved: usize,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Re-clusters the neighborhood around `seeds` at `level`.
///
/// The neighborhood is the union of the `r_f` partitions nearest to each seed
/// centroid (seeds included). k-means runs `n_iters` rounds over that
/// neighborhood's vectors starting from the current centroids, then every
/// vector moves to its nearest neighborhood centroid and centroids are
/// updated in place.
pub fn refine_partitions(
    index: &mut MultiLevelIndex,
    level: usize,
    seeds: &[PartitionId],
    r_f: usize,
    n_iters: usize,
) -> Result<RefineSummary> {
    if level >= index.num_levels() {
        return Err(Error::invalid(format!(
            "level {level} out of range for {} levels",
            index.num_levels()
        )));
    }
    for s in seeds {
        if index.partition(level, *s).is_none() {
            return Err(Error::invalid(format!("no partition {s} at level {level}")));
        }
    }
    let neighborhood = index.neighborhood(level, seeds, r_f.max(1));
    let dim = index.dim();

    let mut points = Vec::new();
    let mut ids = Vec::new();
    let mut origin = Vec::new();
    let mut centroids = Vec::with_capacity(neighborhood.len() * dim);
    for (slot, pid) in neighborhood.iter().enumerate() {
        let p = index
            .partition(level, *pid)
            .expect("neighborhood partition");
        points.extend_from_slice(p.data());
        ids.extend_from_slice(p.ids());
        origin.extend(std::iter::repeat_n(slot, p.len()));
        centroids.extend_from_slice(index.centroid(level, *pid).expect("centroid"));
    }

    let objective_before: f64 = points
        .chunks_exact(dim)
        .zip(&origin)
        .map(|(p, &s)| l2_sq(p, &centroids[s * dim..(s + 1) * dim]) as f64)
        .sum();

    if points.is_empty() {
        return Ok(RefineSummary {
            partitions: neighborhood,
            ..Default::default()
        });
    }

    let clustering = seeded_kmeans(&points, dim, &centroids, n_iters)?;
    let moved = clustering
        .assignments
        .iter()
        .zip(&origin)
        .filter(|(a, o)| a != o)
        .count();
    index.apply_reassignment(level, &neighborhood, &ids, &clustering)?;

    Ok(RefineSummary {
        partitions: neighborhood,
        vectors: ids.len(),
        moved,
        objective_before,
        objective_after: clustering.final_objective(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn gaussian_blobs(centers: &[(Vec<f32>, usize)], sd: f32, seed: u64) -> (Vec<f32>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0f32, sd).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (label, (c, count)) in centers.iter().enumerate() {
            for _ in 0..*count {
                pts.extend(c.iter().map(|x| x + noise.sample(&mut rng)));
                labels.push(label);
            }
        }
        (pts, labels)
    }

    /// Fraction of points whose cluster's majority label matches their own.
    fn purity(assignments: &[usize], labels: &[usize], k: usize, n_labels: usize) -> f64 {
        let mut counts = vec![vec![0usize; n_labels]; k];
        for (&a, &l) in assignments.iter().zip(labels) {
            counts[a][l] += 1;
        }
        let majority: usize = counts
            .iter()
            .map(|c| c.iter().max().copied().unwrap_or(0))
            .sum();
        majority as f64 / labels.len() as f64
    }

    fn cfg(k: usize, iters: usize, seed: u64) -> KMeansConfig {
        KMeansConfig {
            n_clusters: k,
            n_iters: iters,
            seed,
            metric: Metric::L2,
        }
    }

    #[test]
    fn two_points_two_clusters() {
        let c = kmeans(&[0.0, 0.0, 1.0, 1.0], 2, &cfg(2, 5, 1)).unwrap();
        assert_eq!(c.n_clusters(), 2);
        assert_ne!(c.assignments[0], c.assignments[1]);
        assert_eq!(c.final_objective(), 0.0);
    }

    #[test]
    fn recovers_well_separated_centers() {
        let centers = vec![
            (vec![0.0, 0.0, 0.0], 100),
            (vec![50.0, 0.0, 0.0], 100),
            (vec![0.0, 50.0, 50.0], 100),
        ];
        let (pts, labels) = gaussian_blobs(&centers, 0.5, 7);
        let c = kmeans(&pts, 3, &cfg(3, 20, 11)).unwrap();
        assert_eq!(purity(&c.assignments, &labels, 3, 3), 1.0);
    }

    #[test]
    fn zero_iterations_is_nearest_init() {
        let (pts, _) = gaussian_blobs(&[(vec![0.0, 0.0], 30), (vec![5.0, 5.0], 30)], 1.0, 2);
        let c = kmeans(&pts, 2, &cfg(4, 0, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init = kmeans_plus_plus(&pts, 2, 4, &mut rng);
        assert_eq!(c.centroids, init);
        let (expected, _) = assign(&pts, 2, &init);
        assert_eq!(c.assignments, expected);
        assert_eq!(c.objective.len(), 1);
    }

    #[test]
    fn objective_is_non_increasing_and_deterministic() {
        let (pts, _) = gaussian_blobs(
            &[
                (vec![0.0; 8], 200),
                (vec![1.0; 8], 150),
                (vec![-2.0; 8], 50),
            ],
            1.5,
            9,
        );
        let a = kmeans(&pts, 8, &cfg(12, 25, 3)).unwrap();
        for w in a.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{} -> {}", w[0], w[1]);
        }
        assert!(a.sizes().iter().all(|&s| s > 0));
        let b = kmeans(&pts, 8, &cfg(12, 25, 3)).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn duplicate_points_reduce_cluster_count() {
        let pts = vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        let c = kmeans(&pts, 2, &cfg(3, 5, 0)).unwrap();
        assert_eq!(c.n_clusters(), 2);
        assert_eq!(c.reduced_from, Some(3));
        assert!(kmeans(&[], 2, &cfg(1, 1, 0)).is_err());
        assert!(kmeans(&pts, 2, &cfg(0, 1, 0)).is_err());
    }

    #[test]
    fn split_two_points() {
        match split_partition(&[0.0, 0.0, 3.0, 4.0], 2, 1, Metric::L2).unwrap() {
            SplitOutcome::Split { left, right } => {
                assert_eq!(left.members.len(), 1);
                assert_eq!(right.members.len(), 1);
            }
            SplitOutcome::CannotSplit => panic!("two distinct points must split"),
        }
        assert_eq!(
            split_partition(&[1.0, 1.0, 1.0, 1.0], 2, 1, Metric::L2).unwrap(),
            SplitOutcome::CannotSplit
        );
        assert_eq!(
            split_partition(&[1.0, 1.0], 2, 1, Metric::L2).unwrap(),
            SplitOutcome::CannotSplit
        );
    }

    fn split_sizes_and_purity(counts: (usize, usize), seed: u64) -> (Vec<usize>, f64) {
        let (pts, labels) = gaussian_blobs(
            &[
                (vec![0.0, 0.0, 0.0, 0.0], counts.0),
                (vec![8.0, 8.0, 0.0, 0.0], counts.1),
            ],
            1.0,
            seed,
        );
        match split_partition(&pts, 4, seed, Metric::L2).unwrap() {
            SplitOutcome::Split { left, right } => {
                let mut assignment = vec![0; labels.len()];
                for &m in &right.members {
                    assignment[m] = 1;
                }
                let all: HashSet<usize> =
                    left.members.iter().chain(&right.members).copied().collect();
                assert_eq!(all.len(), labels.len());
                let mut sizes = vec![left.members.len(), right.members.len()];
                sizes.sort_unstable();
                (sizes, purity(&assignment, &labels, 2, 2))
            }
            SplitOutcome::CannotSplit => panic!("bimodal data must split"),
        }
    }

    #[test]
    fn split_recovers_modes() {
        let (_, p) = split_sizes_and_purity((250, 250), 4);
        assert!(p >= 0.95, "purity {p}");
    }

    #[test]
    fn split_follows_imbalanced_modes() {
        let (sizes, p) = split_sizes_and_purity((450, 50), 8);
        assert!(p >= 0.95, "purity {p}");
        assert!(sizes[0] >= 40 && sizes[0] <= 60, "sizes {sizes:?}");
    }

    #[test]
    fn seeded_kmeans_zero_iters_reassigns_to_nearest_seed() {
        let pts = vec![0.0, 0.9, 2.1, 3.0];
        let c = seeded_kmeans(&pts, 1, &[0.0, 3.0], 0).unwrap();
        assert_eq!(c.assignments, vec![0, 0, 1, 1]);
        assert_eq!(c.centroids, vec![0.0, 3.0]);
    }
}

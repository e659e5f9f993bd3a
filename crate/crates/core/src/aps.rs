//! Adaptive partition scanning.
//!
//! A query's current `k`-th neighbor distance `rho` defines a ball around
//! the query. For every candidate partition the estimator approximates the
//! share of that ball lying on the candidate's side of the bisecting
//! hyperplane between the candidate's centroid and the nearest centroid,
//! turns those shares into the probability `p_i` that the candidate holds a
//! true neighbor, and stops scanning once the scanned probabilities sum to
//! the recall target.
//!
//! Inner-product indexes are handled through the usual reduction to L2: a
//! data vector `x` is treated as `[x, sqrt(phi^2 - |x|^2)]` and the query as
//! `[q, 0]`, where `phi^2` is the largest squared norm in the index. The
//! estimator then works in `d + 1` dimensions. Centroids are augmented the
//! same way, which is an approximation since they are trained on raw vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{MultiLevelIndex, PartitionId};
use crate::kernels::{dot, l2_sq, norm_sq, KnnResult, Metric, TopKBuffer};
use crate::special::beta_reg;

/// Number of samples in a [`BetaTable`].
pub const TABLE_POINTS: usize = 1024;

/// `I_x((d + 1) / 2, 1/2)` sampled at 1024 points for one dimension.
///
/// Samples are evenly spaced in `u = t / rho`, the normalized distance from
/// the ball center to the cutting hyperplane, with `x = 1 - u^2`. Spacing in
/// `u` keeps linear interpolation accurate near `x = 1`, where the function
/// has a square-root cusp.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaTable {
    dim: usize,
    values: Vec<f64>,
}

impl BetaTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "beta table needs a positive dimension");
        let a = (dim as f64 + 1.0) / 2.0;
        let last = (TABLE_POINTS - 1) as f64;
        let values = (0..TABLE_POINTS)
            .map(|i| {
                let u = i as f64 / last;
                beta_reg(a, 0.5, 1.0 - u * u)
            })
            .collect();
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Table samples, from `u = 0` (value 1) to `u = 1` (value 0).
    pub fn samples(&self) -> &[f64] {
        &self.values
    }

    fn at_u(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 1.0;
        }
        if u >= 1.0 {
            return 0.0;
        }
        let pos = u * (TABLE_POINTS - 1) as f64;
        let i = (pos as usize).min(TABLE_POINTS - 2);
        let frac = pos - i as f64;
        self.values[i] + (self.values[i + 1] - self.values[i]) * frac
    }

    /// Interpolated `I_x((d + 1) / 2, 1/2)`.
    pub fn regularized(&self, x: f64) -> f64 {
        self.at_u((1.0 - x.clamp(0.0, 1.0)).sqrt())
    }
}

/// Fraction of a `d`-ball of radius `rho` cut off by a hyperplane at
/// distance `t` from its center: `1/2 * I_{1 - (t/rho)^2}((d + 1) / 2, 1/2)`.
///
/// ```
/// use adaptive_ivf::aps::{cap_volume_fraction, BetaTable};
/// let table = BetaTable::new(3);
/// assert_eq!(cap_volume_fraction(0.0, 1.0, &table).unwrap(), 0.5);
/// assert_eq!(cap_volume_fraction(1.5, 1.0, &table).unwrap(), 0.0);
/// // In 3-d the cap at half the radius holds 5/32 of the ball.
/// let v = cap_volume_fraction(0.5, 1.0, &table).unwrap();
/// assert!((v - 5.0 / 32.0).abs() < 1e-4);
/// ```
pub fn cap_volume_fraction(t: f64, rho: f64, table: &BetaTable) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!(
            "radius must be positive, got {rho}"
        )));
    }
    Ok(cap_fraction(t, rho, table))
}

fn cap_fraction(t: f64, rho: f64, table: &BetaTable) -> f64 {
    let u = t.max(0.0) / rho;
    if u >= 1.0 {
        0.0
    } else {
        0.5 * table.at_u(u)
    }
}

/// Partition probabilities from candidate geometry.
///
/// `dist_sq[i]` is the squared distance from the query to candidate `i`'s
/// centroid, with candidate 0 the nearest; `pair[i]` is the distance between
/// centroid `i` and centroid 0. Returns `p_0..p_{M-1}`, summing to 1.
pub fn probabilities_from_geometry(
    rho: f64,
    dist_sq: &[f64],
    pair: &[f64],
    table: &BetaTable,
) -> Vec<f64> {
    let m = dist_sq.len();
    if m == 0 {
        return Vec::new();
    }
    let mut p = vec![0.0; m];
    let mut total = 0.0;
    for j in 1..m {
        let v = if rho > 0.0 {
            let t = if pair[j] > 0.0 {
                ((dist_sq[j] - dist_sq[0]) / (2.0 * pair[j])).max(0.0)
            } else {
                0.0
            };
            cap_fraction(t, rho, table)
        } else {
            0.0
        };
        p[j] = v;
        total += v;
    }
    if total > 0.0 {
        for v in &mut p[1..] {
            *v /= total;
        }
    }
    let p0: f64 = p[1..].iter().map(|v| 1.0 - v).product();
    for v in &mut p[1..] {
        *v *= 1.0 - p0;
    }
    p[0] = p0;
    p
}

/// Probabilities for explicit L2 centroids; `c0` must be the nearest.
pub fn partition_probabilities(
    query: &[f32],
    rho: f64,
    c0: &[f32],
    others: &[&[f32]],
    table: &BetaTable,
) -> Result<Vec<f64>> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!(
            "radius must be positive, got {rho}"
        )));
    }
    for c in std::iter::once(&c0).chain(others) {
        if c.len() != query.len() {
            return Err(Error::DimensionMismatch {
                expected: query.len(),
                got: c.len(),
            });
        }
    }
    let mut dist_sq = vec![l2_sq(query, c0) as f64];
    let mut pair = vec![0.0];
    for c in others {
        dist_sq.push(l2_sq(query, c) as f64);
        pair.push((l2_sq(c, c0) as f64).sqrt());
    }
    Ok(probabilities_from_geometry(rho, &dist_sq, &pair, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApsConfig {
    pub k: usize,
    /// Level-0 recall target.
    pub recall_target: f64,
    /// Fraction of level-0 partitions considered as candidates.
    pub initial_fraction: f64,
    /// Fraction of partitions considered at each level above 0. The root
    /// scores every centroid anyway, so the default leaves all of them in
    /// play and lets the upper target decide.
    pub upper_initial_fraction: f64,
    pub upper_recall_target: f64,
    /// Relative radius change that triggers a probability recompute.
    pub recompute_threshold: f64,
    /// Recompute after every scan regardless of the threshold.
    pub recompute_always: bool,
    /// Scan exactly this many level-0 partitions instead of estimating.
    pub fixed_nprobe: Option<usize>,
}

impl Default for ApsConfig {
    fn default() -> Self {
        Self {
            k: 100,
            recall_target: 0.9,
            initial_fraction: 0.1,
            upper_initial_fraction: 1.0,
            upper_recall_target: 0.99,
            recompute_threshold: 0.01,
            recompute_always: false,
            fixed_nprobe: None,
        }
    }
}

impl ApsConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be in (0, 1], got {v}")))
            }
        };
        if self.k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        unit("recall target", self.recall_target)?;
        unit("initial fraction", self.initial_fraction)?;
        unit("upper initial fraction", self.upper_initial_fraction)?;
        unit("upper recall target", self.upper_recall_target)?;
        if !(self.recompute_threshold >= 0.0) {
            return Err(Error::invalid("recompute threshold must be non-negative"));
        }
        if self.fixed_nprobe == Some(0) {
            return Err(Error::invalid("fixed nprobe must be positive"));
        }
        Ok(())
    }
}

/// Distance geometry shared by routing and estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    metric: Metric,
    phi_sq: f64,
}

impl Geometry {
    pub fn of(index: &MultiLevelIndex) -> Self {
        Self {
            metric: index.metric(),
            phi_sq: index.max_norm_sq() as f64,
        }
    }

    /// Dimension the estimator works in.
    pub fn dim(index: &MultiLevelIndex) -> usize {
        index.dim() + usize::from(index.metric() == Metric::InnerProduct)
    }

    fn augment(&self, c: &[f32]) -> f64 {
        match self.metric {
            Metric::L2 => 0.0,
            Metric::InnerProduct => (self.phi_sq - norm_sq(c) as f64).max(0.0).sqrt(),
        }
    }

    /// Squared distance from the query to a centroid.
    pub fn dist_sq(&self, q: &[f32], q_norm_sq: f64, c: &[f32]) -> f64 {
        match self.metric {
            Metric::L2 => l2_sq(q, c) as f64,
            Metric::InnerProduct => {
                let a = self.augment(c);
                (q_norm_sq + norm_sq(c) as f64 + a * a - 2.0 * dot(q, c) as f64).max(0.0)
            }
        }
    }

    /// Distance between two centroids.
    pub fn pair_dist(&self, a: &[f32], b: &[f32]) -> f64 {
        let extra = self.augment(a) - self.augment(b);
        (l2_sq(a, b) as f64 + extra * extra).sqrt()
    }

    /// Query radius from the `k`-th best score at `level`.
    pub fn radius(&self, level: usize, q_norm_sq: f64, kth: f32) -> f64 {
        let r2 = match (level, self.metric) {
            (0, Metric::InnerProduct) => q_norm_sq + self.phi_sq - 2.0 * kth as f64,
            _ => kth as f64,
        };
        r2.max(0.0).sqrt()
    }
}

/// Tracks probabilities and the running recall estimate for one query at
/// one level.
///
/// Probabilities are first computed once a radius is known. Later
/// recomputes refresh unscanned candidates only; a scanned candidate's
/// contribution is frozen at its value when scanned, so the estimate never
/// decreases.
#[derive(Debug, Clone)]
pub struct Estimator<'t> {
    table: &'t BetaTable,
    dist_sq: Vec<f64>,
    pair: Vec<f64>,
    p: Vec<f64>,
    scanned: Vec<bool>,
    rho: Option<f64>,
    estimate: f64,
    threshold: f64,
    always: bool,
    recomputes: usize,
}

impl<'t> Estimator<'t> {
    pub fn new(
        table: &'t BetaTable,
        dist_sq: Vec<f64>,
        pair: Vec<f64>,
        threshold: f64,
        always: bool,
    ) -> Self {
        let m = dist_sq.len();
        Self {
            table,
            dist_sq,
            pair,
            p: vec![0.0; m],
            scanned: vec![false; m],
            rho: None,
            estimate: 0.0,
            threshold,
            always,
            recomputes: 0,
        }
    }

    /// Builds the estimator for `candidates` (sorted nearest first) at `level`.
    pub fn for_candidates(
        index: &MultiLevelIndex,
        level: usize,
        candidates: &[Candidate],
        table: &'t BetaTable,
        config: &ApsConfig,
    ) -> Self {
        let geom = Geometry::of(index);
        let c0 = candidates
            .first()
            .and_then(|c| index.centroid(level, c.pid));
        let pair = candidates
            .iter()
            .map(|c| match (c0, index.centroid(level, c.pid)) {
                (Some(a), Some(b)) => geom.pair_dist(a, b),
                _ => 0.0,
            })
            .collect();
        Self::new(
            table,
            candidates.iter().map(|c| c.dist_sq).collect(),
            pair,
            config.recompute_threshold,
            config.recompute_always,
        )
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Whether probabilities have been computed yet.
    pub fn is_active(&self) -> bool {
        self.rho.is_some()
    }

    pub fn estimate(&self) -> f64 {
        self.estimate.min(1.0)
    }

    pub fn recomputes(&self) -> usize {
        self.recomputes
    }

    pub fn radius(&self) -> Option<f64> {
        self.rho
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn is_scanned(&self, i: usize) -> bool {
        self.scanned[i]
    }

    pub fn exhausted(&self) -> bool {
        self.scanned.iter().all(|&s| s)
    }

    /// Feeds the current radius, recomputing when it moved enough.
    /// Returns whether probabilities were recomputed.
    pub fn observe_radius(&mut self, rho: f64) -> bool {
        let recompute = match self.rho {
            None => true,
            Some(old) => self.always || (rho - old).abs() > self.threshold * old,
        };
        if !recompute {
            return false;
        }
        let fresh = probabilities_from_geometry(rho, &self.dist_sq, &self.pair, self.table);
        let first = self.rho.is_none();
        for (i, p) in fresh.into_iter().enumerate() {
            if !self.scanned[i] {
                self.p[i] = p;
            } else if first {
                self.p[i] = p;
                self.estimate += p;
            }
        }
        self.rho = Some(rho);
        self.recomputes += 1;
        true
    }

    pub fn mark_scanned(&mut self, i: usize) {
        debug_assert!(!self.scanned[i], "candidate scanned twice");
        self.scanned[i] = true;
        if self.rho.is_some() {
            self.estimate += self.p[i];
        }
    }

    /// Next candidate to scan: nearest unscanned before probabilities
    /// exist, then the unscanned candidate with the largest probability.
    pub fn next(&self) -> Option<usize> {
        let unscanned = (0..self.p.len()).filter(|&i| !self.scanned[i]);
        if self.rho.is_none() {
            return unscanned.min();
        }
        unscanned.fold(None, |best: Option<usize>, i| match best {
            Some(b) if self.p[b] >= self.p[i] => Some(b),
            _ => Some(i),
        })
    }
}

/// A partition considered for scanning, with its squared centroid distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub pid: PartitionId,
    pub dist_sq: f64,
}

/// Level-0 candidates plus the upper-level partitions scanned to find them.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub candidates: Vec<Candidate>,
    pub upper_scanned: Vec<(usize, PartitionId)>,
    pub upper_recomputes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub result: KnnResult,
    /// Level-0 partitions scanned.
    pub nprobe: usize,
    /// Every partition scanned at every level, root first.
    pub scanned: Vec<(usize, PartitionId)>,
    /// Level-0 probability recomputations.
    pub recomputes: usize,
    /// Final level-0 recall estimate.
    pub estimate: f64,
    /// Level-0 candidate count.
    pub candidates: usize,
}

fn fraction_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1))
}

fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| a.dist_sq.total_cmp(&b.dist_sq).then(a.pid.cmp(&b.pid)));
}

struct LevelScan {
    buf: TopKBuffer,
    scanned: Vec<PartitionId>,
    recomputes: usize,
    estimate: f64,
}

/// Scores every row of an upper-level partition by centroid distance.
fn scan_centroids(
    index: &MultiLevelIndex,
    geom: &Geometry,
    level: usize,
    pid: PartitionId,
    q: &[f32],
    q_norm_sq: f64,
    buf: &mut TopKBuffer,
) {
    if let Some(p) = index.partition(level, pid) {
        for (id, row) in p.ids().iter().zip(p.data().chunks_exact(index.dim())) {
            buf.push(*id, geom.dist_sq(q, q_norm_sq, row) as f32);
        }
    }
}

/// Scans one partition at any level into `buf`.
pub fn scan_one(
    index: &MultiLevelIndex,
    level: usize,
    pid: PartitionId,
    q: &[f32],
    buf: &mut TopKBuffer,
) {
    if level == 0 {
        index.scan_partition(0, pid, q, buf);
    } else {
        let geom = Geometry::of(index);
        scan_centroids(index, &geom, level, pid, q, norm_sq(q) as f64, buf);
    }
}

#[allow(clippy::too_many_arguments)]
fn scan_level(
    index: &MultiLevelIndex,
    level: usize,
    q: &[f32],
    candidates: &[Candidate],
    k: usize,
    target: f64,
    fixed: Option<usize>,
    config: &ApsConfig,
    table: &BetaTable,
) -> LevelScan {
    let geom = Geometry::of(index);
    let q_norm_sq = norm_sq(q) as f64;
    let metric = if level == 0 {
        index.metric()
    } else {
        Metric::L2
    };
    let mut buf = TopKBuffer::new(k, metric);
    let mut scanned = Vec::new();

    if let Some(n) = fixed {
        for c in candidates.iter().take(n) {
            scan_one(index, level, c.pid, q, &mut buf);
            scanned.push(c.pid);
        }
        return LevelScan {
            buf,
            scanned,
            recomputes: 0,
            estimate: 0.0,
        };
    }

    let mut est = Estimator::for_candidates(index, level, candidates, table, config);
    while let Some(i) = est.next() {
        let pid = candidates[i].pid;
        if level == 0 {
            index.scan_partition(0, pid, q, &mut buf);
        } else {
            scan_centroids(index, &geom, level, pid, q, q_norm_sq, &mut buf);
        }
        scanned.push(pid);
        est.mark_scanned(i);
        if let Some(kth) = buf.kth_score() {
            est.observe_radius(geom.radius(level, q_norm_sq, kth));
        }
        if target < 1.0 && est.is_active() && est.estimate() >= target {
            break;
        }
    }
    let estimate = if buf.is_full() { est.estimate() } else { 1.0 };
    LevelScan {
        buf,
        scanned,
        recomputes: est.recomputes(),
        estimate,
    }
}

fn check_query(
    index: &MultiLevelIndex,
    q: &[f32],
    config: &ApsConfig,
    table: &BetaTable,
) -> Result<()> {
    config.validate()?;
    if q.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            got: q.len(),
        });
    }
    let want = Geometry::dim(index);
    if table.dim() != want {
        return Err(Error::invalid(format!(
            "beta table built for dimension {}, index needs {want}",
            table.dim()
        )));
    }
    Ok(())
}

/// Finds the level-0 candidate partitions for `q`, running the estimator
/// at each centroid level with the upper-level target.
pub fn route(
    index: &MultiLevelIndex,
    q: &[f32],
    config: &ApsConfig,
    table: &BetaTable,
) -> Result<Route> {
    check_query(index, q, config, table)?;
    let geom = Geometry::of(index);
    let q_norm_sq = norm_sq(q) as f64;
    let root_level = index.root_level();
    let root = index.root_id();
    let mut upper_scanned = vec![(root_level, root)];
    let mut upper_recomputes = 0;

    let fraction = |level: usize| {
        if level == 0 {
            config.initial_fraction
        } else {
            config.upper_initial_fraction
        }
    };
    let want = |level: usize| {
        let n = index.partition_count(level);
        let base = fraction_count(fraction(level), n);
        match (level, config.fixed_nprobe) {
            (0, Some(np)) => base.max(np.min(n)),
            _ => base,
        }
    };

    // The root holds every centroid of the level below it.
    let top = root_level - 1;
    let mut candidates: Vec<Candidate> = index
        .partition(root_level, root)
        .map(|p| {
            p.ids()
                .iter()
                .zip(p.data().chunks_exact(index.dim()))
                .map(|(&id, c)| Candidate {
                    pid: PartitionId(id),
                    dist_sq: geom.dist_sq(q, q_norm_sq, c),
                })
                .collect()
        })
        .unwrap_or_default();
    sort_candidates(&mut candidates);
    candidates.truncate(want(top));

    for level in (1..=top).rev() {
        let scan = scan_level(
            index,
            level,
            q,
            &candidates,
            want(level - 1),
            config.upper_recall_target,
            None,
            config,
            table,
        );
        upper_scanned.extend(scan.scanned.iter().map(|p| (level, *p)));
        upper_recomputes += scan.recomputes;
        candidates = scan
            .buf
            .entries()
            .into_iter()
            .map(|n| Candidate {
                pid: PartitionId(n.id),
                dist_sq: n.score as f64,
            })
            .collect();
    }
    Ok(Route {
        candidates,
        upper_scanned,
        upper_recomputes,
    })
}

/// Multi-level adaptive search.
///
/// With one partitioned level this is the plain algorithm: the nearest
/// `ceil(f_M * N)` centroids become candidates, the nearest is scanned
/// first, and scanning continues in order of probability until the
/// estimate reaches the target or candidates run out.
pub fn search(
    index: &MultiLevelIndex,
    q: &[f32],
    config: &ApsConfig,
    table: &BetaTable,
) -> Result<SearchOutcome> {
    let route = route(index, q, config, table)?;
    Ok(search_routed(index, q, &route, config, table))
}

/// Level-0 scan over an existing route.
pub fn search_routed(
    index: &MultiLevelIndex,
    q: &[f32],
    route: &Route,
    config: &ApsConfig,
    table: &BetaTable,
) -> SearchOutcome {
    let scan = scan_level(
        index,
        0,
        q,
        &route.candidates,
        config.k,
        config.recall_target,
        config.fixed_nprobe,
        config,
        table,
    );
    let mut scanned = route.upper_scanned.clone();
    scanned.extend(scan.scanned.iter().map(|p| (0, *p)));
    SearchOutcome {
        result: scan.buf.to_result(),
        nprobe: scan.scanned.len(),
        scanned,
        recomputes: scan.recomputes,
        estimate: scan.estimate,
        candidates: route.candidates.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::BuildConfig;
    use crate::kernels::brute_force_knn;
    use crate::store::VectorStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn monte_carlo_cap(d: usize, u: f64, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        let mut g = vec![0.0f64; d];
        for _ in 0..samples {
            for x in g.iter_mut() {
                *x = StandardNormal.sample(&mut rng);
            }
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let r: f64 = rng.random::<f64>().powf(1.0 / d as f64);
            if g[0] / norm * r > u {
                hits += 1;
            }
        }
        hits as f64 / samples as f64
    }

    #[test]
    fn table_endpoints_and_monotone() {
        for d in [1, 2, 3, 17, 256] {
            let t = BetaTable::new(d);
            assert_eq!(t.regularized(0.0), 0.0);
            assert_eq!(t.regularized(1.0), 1.0);
            let mut prev = 0.0;
            for i in 0..=2000 {
                let v = t.regularized(i as f64 / 2000.0);
                assert!(v >= prev - 1e-15);
                prev = v;
            }
        }
    }

    #[test]
    fn cap_volume_edges() {
        let t = BetaTable::new(8);
        assert_eq!(cap_volume_fraction(2.0, 1.0, &t).unwrap(), 0.0);
        assert_eq!(cap_volume_fraction(1.0, 1.0, &t).unwrap(), 0.0);
        assert_eq!(cap_volume_fraction(0.0, 3.0, &t).unwrap(), 0.5);
        assert!(cap_volume_fraction(0.1, 0.0, &t).is_err());
        assert!(cap_volume_fraction(0.1, -1.0, &t).is_err());
    }

    #[test]
    fn cap_volume_matches_monte_carlo_in_3d() {
        let t = BetaTable::new(3);
        let v = cap_volume_fraction(0.5, 1.0, &t).unwrap();
        let mc = monte_carlo_cap(3, 0.5, 1_000_000, 7);
        assert!((v - mc).abs() < 0.005, "{v} vs {mc}");
    }

    #[test]
    fn probabilities_edge_cases() {
        let t = BetaTable::new(2);
        let q = [0.0f32, 0.0];
        assert_eq!(
            partition_probabilities(&q, 1.0, &[0.1, 0.0], &[], &t).unwrap(),
            vec![1.0]
        );
        // Single other candidate within reach: normalization forces v = 1.
        let p = partition_probabilities(&q, 1.0, &[-0.1, 0.0], &[&[0.5, 0.0]], &t).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
        // Out of reach: raw cap is 0 so p0 = 1.
        let p = partition_probabilities(&q, 1.0, &[-0.1, 0.0], &[&[5.0, 0.0]], &t).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        // Mirror-image neighbors share probability.
        let p = partition_probabilities(&q, 1.0, &[-0.2, 0.0], &[&[0.3, 0.4], &[0.3, -0.4]], &t)
            .unwrap();
        assert!((p[1] - p[2]).abs() < 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Duplicate centroid acts as t = 0.
        let p =
            partition_probabilities(&q, 1.0, &[0.2, 0.0], &[&[0.2, 0.0], &[3.0, 0.0]], &t).unwrap();
        assert_eq!(p[2], 0.0);
        assert_eq!(p[0], 0.0);
    }

    fn clustered(n: usize, dim: usize, clusters: usize, seed: u64) -> (VectorStore, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f32>> = (0..clusters)
            .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let point = |rng: &mut ChaCha8Rng| -> Vec<f32> {
            let c = &centers[rng.random_range(0..clusters)];
            c.iter()
                .map(|x| {
                    let z: f32 = StandardNormal.sample(rng);
                    x + z
                })
                .collect()
        };
        let data: Vec<f32> = (0..n).flat_map(|_| point(&mut rng)).collect();
        let queries: Vec<f32> = (0..100).flat_map(|_| point(&mut rng)).collect();
        (VectorStore::from_rows(dim, data, None).unwrap(), queries)
    }

    #[test]
    fn exhaustive_limit_is_exact() {
        let (store, queries) = clustered(3000, 8, 20, 1);
        let index = MultiLevelIndex::build(
            &store,
            &BuildConfig {
                partitions_per_level: vec![30],
                ..Default::default()
            },
        )
        .unwrap();
        let table = BetaTable::new(8);
        let cfg = ApsConfig {
            k: 10,
            recall_target: 1.0,
            initial_fraction: 1.0,
            ..Default::default()
        };
        let truth = brute_force_knn(&queries, &store, 10, Metric::L2).unwrap();
        for (q, t) in queries.chunks_exact(8).zip(&truth) {
            let out = search(&index, q, &cfg, &table).unwrap();
            assert_eq!(out.nprobe, 30);
            assert_eq!(out.result.ids, t.ids);
        }
    }

    #[test]
    fn estimator_invariants_hold_during_scan() {
        let (store, queries) = clustered(4000, 8, 40, 2);
        let index = MultiLevelIndex::build(
            &store,
            &BuildConfig {
                partitions_per_level: vec![64],
                ..Default::default()
            },
        )
        .unwrap();
        let table = BetaTable::new(8);
        let cfg = ApsConfig {
            k: 10,
            initial_fraction: 0.5,
            recompute_always: true,
            ..Default::default()
        };
        for q in queries.chunks_exact(8).take(20) {
            let route = route(&index, q, &cfg, &table).unwrap();
            let mut est = Estimator::for_candidates(&index, 0, &route.candidates, &table, &cfg);
            let mut buf = TopKBuffer::new(10, Metric::L2);
            let mut last_rho = f64::INFINITY;
            let mut last_r = 0.0;
            while let Some(i) = est.next() {
                index.scan_partition(0, route.candidates[i].pid, q, &mut buf);
                est.mark_scanned(i);
                if let Some(kth) = buf.kth_score() {
                    let rho = (kth as f64).sqrt();
                    assert!(rho <= last_rho);
                    last_rho = rho;
                    est.observe_radius(rho);
                    let sum: f64 = probabilities_from_geometry(
                        rho,
                        &route
                            .candidates
                            .iter()
                            .map(|c| c.dist_sq)
                            .collect::<Vec<_>>(),
                        &est.pair,
                        &table,
                    )
                    .iter()
                    .sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                }
                assert!(est.probabilities().iter().all(|p| (0.0..=1.0).contains(p)));
                assert!(est.estimate() >= last_r);
                last_r = est.estimate();
            }
        }
    }

    #[test]
    fn fewer_than_k_vectors_forces_complete_estimate() {
        let store = VectorStore::from_rows(2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0], None).unwrap();
        let index = MultiLevelIndex::build(
            &store,
            &BuildConfig {
                partitions_per_level: vec![2],
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = ApsConfig {
            k: 10,
            initial_fraction: 1.0,
            ..Default::default()
        };
        let out = search(&index, &[0.0, 0.0], &cfg, &BetaTable::new(2)).unwrap();
        assert_eq!(out.result.len(), 3);
        assert_eq!(out.estimate, 1.0);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let store = VectorStore::from_rows(2, vec![0.0, 0.0, 1.0, 1.0], None).unwrap();
        let index = MultiLevelIndex::build(&store, &BuildConfig::default()).unwrap();
        let cfg = ApsConfig::default();
        assert!(search(&index, &[0.0], &cfg, &BetaTable::new(2)).is_err());
        assert!(search(&index, &[0.0, 0.0], &cfg, &BetaTable::new(3)).is_err());
        let bad = ApsConfig {
            recall_target: 0.0,
            ..Default::default()
        };
        assert!(search(&index, &[0.0, 0.0], &bad, &BetaTable::new(2)).is_err());
    }
}

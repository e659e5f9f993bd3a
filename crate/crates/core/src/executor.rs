//! Parallel partition scanning with adaptive termination.
//!
//! Partitions are placed on logical nodes round-robin by id and bound to one
//! worker inside that node. For a query, the coordinator scans the nearest
//! candidate itself to get an initial radius, hands the rest to the workers'
//! queues ordered by probability, and merges per-partition partial results
//! as they arrive. It refreshes the recall estimate on every merge and raises
//! a stop flag once the target is met. Workers that run dry may steal the
//! lowest-priority entry from a sibling in the same node.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::aps::{
    route, search_routed, ApsConfig, BetaTable, Candidate, Estimator, Geometry, Route,
    SearchOutcome,
};
use crate::error::{Error, Result};
use crate::index::{MultiLevelIndex, PartitionId};
use crate::kernels::{norm_sq, TopKBuffer};

/// Minimum coordinator poll interval.
const POLL: Duration = Duration::from_micros(100);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeTopology {
    pub nodes: usize,
    pub workers_per_node: usize,
    /// Pin workers to cores when the platform allows it.
    pub pin: bool,
}

impl Default for NodeTopology {
    fn default() -> Self {
        Self {
            nodes: 1,
            workers_per_node: 1,
            pin: true,
        }
    }
}

impl NodeTopology {
    pub fn new(nodes: usize, workers_per_node: usize) -> Result<Self> {
        let t = Self {
            nodes,
            workers_per_node,
            pin: true,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.workers_per_node == 0 {
            return Err(Error::invalid(
                "topology needs at least one node and one worker",
            ));
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        self.nodes * self.workers_per_node
    }

    pub fn is_single(&self) -> bool {
        self.workers() == 1
    }

    /// `(node, worker within node)` owning a level-0 partition.
    pub fn placement(&self, pid: PartitionId) -> (usize, usize) {
        let n = self.nodes as u64;
        let node = (pid.0 % n) as usize;
        let worker = ((pid.0 / n) % self.workers_per_node as u64) as usize;
        (node, worker)
    }
}

/// Everything a query needs once routing is done.
#[derive(Debug, Clone)]
pub struct QueryJob {
    pub query: Vec<f32>,
    pub route: Route,
    pub config: ApsConfig,
    /// `queues[node][worker]` holds candidate positions in routing order.
    pub queues: Vec<Vec<VecDeque<usize>>>,
}

impl QueryJob {
    pub fn candidates(&self) -> &[Candidate] {
        &self.route.candidates
    }
}

/// Routes `q` and distributes its level-0 candidates over the topology.
pub fn plan_query(
    index: &MultiLevelIndex,
    q: &[f32],
    config: &ApsConfig,
    table: &BetaTable,
    topology: &NodeTopology,
) -> Result<QueryJob> {
    topology.validate()?;
    let route = route(index, q, config, table)?;
    let mut queues = vec![vec![VecDeque::new(); topology.workers_per_node]; topology.nodes];
    for (i, c) in route.candidates.iter().enumerate() {
        let (n, w) = topology.placement(c.pid);
        queues[n][w].push_back(i);
    }
    Ok(QueryJob {
        query: q.to_vec(),
        route,
        config: config.clone(),
        queues,
    })
}

/// Single-threaded reference path.
pub fn execute_single(index: &MultiLevelIndex, job: &QueryJob, table: &BetaTable) -> SearchOutcome {
    search_routed(index, &job.query, &job.route, &job.config, table)
}

#[cfg(target_os = "linux")]
fn pin_to_core(core: usize) {
    // Best effort: failures leave the thread unpinned.
    unsafe {
        let n = libc::sysconf(libc::_SC_NPROCESSORS_ONLN);
        if n <= 0 {
            return;
        }
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(core % n as usize, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
    }
}

#[cfg(not(target_os = "linux"))]
fn pin_to_core(_core: usize) {}

type Partial = std::result::Result<(usize, TopKBuffer), String>;

fn take_work(queues: &[Mutex<VecDeque<usize>>], own: usize) -> Option<usize> {
    if let Some(i) = queues[own].lock().expect("queue lock").pop_front() {
        return Some(i);
    }
    (1..queues.len())
        .map(|o| (own + o) % queues.len())
        .find_map(|o| queues[o].lock().expect("queue lock").pop_back())
}

/// Parallel scan of `job` with early termination at the job's recall
/// target. A target of 1 scans every candidate.
pub fn execute_parallel(
    index: &MultiLevelIndex,
    job: &QueryJob,
    table: &BetaTable,
    topology: &NodeTopology,
) -> Result<SearchOutcome> {
    topology.validate()?;
    if job.queues.len() != topology.nodes
        || job
            .queues
            .iter()
            .any(|q| q.len() != topology.workers_per_node)
    {
        return Err(Error::invalid(
            "query job was planned for a different topology",
        ));
    }
    let config = &job.config;
    let q = &job.query;
    let cands = job.candidates();
    let geom = Geometry::of(index);
    let q_norm_sq = norm_sq(q) as f64;
    let target = config.recall_target;
    let mut est = Estimator::for_candidates(index, 0, cands, table, config);
    let mut global = TopKBuffer::new(config.k, index.metric());
    let mut processed: Vec<usize> = Vec::new();

    let mut absorb =
        |i: usize, partial: &TopKBuffer, est: &mut Estimator, global: &mut TopKBuffer| {
            global.merge(partial);
            est.mark_scanned(i);
            processed.push(i);
            if let Some(kth) = global.kth_score() {
                est.observe_radius(geom.radius(0, q_norm_sq, kth));
            }
        };
    let done = |est: &Estimator| target < 1.0 && est.is_active() && est.estimate() >= target;

    let scan = |pid: PartitionId| -> std::result::Result<TopKBuffer, String> {
        let p = index
            .partition(0, pid)
            .ok_or_else(|| format!("partition {pid} is not in the index"))?;
        let mut buf = TopKBuffer::new(config.k, index.metric());
        buf.scan(q, p.ids(), p.data());
        Ok(buf)
    };

    if let Some(first) = cands.first() {
        let buf = scan(first.pid).map_err(Error::Worker)?;
        absorb(0, &buf, &mut est, &mut global);
    }

    if !cands.is_empty() && !done(&est) {
        // Remaining work, highest probability first within each queue.
        let rank = |i: &usize| (std::cmp::Reverse(ordered(est.probabilities()[*i])), *i);
        let nodes: Vec<Vec<Mutex<VecDeque<usize>>>> = job
            .queues
            .iter()
            .map(|node| {
                node.iter()
                    .map(|queue| {
                        let mut v: Vec<usize> = queue.iter().copied().filter(|&i| i != 0).collect();
                        if est.is_active() {
                            v.sort_by_key(rank);
                        }
                        Mutex::new(v.into())
                    })
                    .collect()
            })
            .collect();
        let stop = AtomicBool::new(false);
        let (tx, rx) = mpsc::channel::<Partial>();

        let outcome: std::result::Result<(), String> = std::thread::scope(|s| {
            let mut handles = Vec::new();
            for (n, node) in nodes.iter().enumerate() {
                for w in 0..node.len() {
                    let tx = tx.clone();
                    let stop = &stop;
                    let scan = &scan;
                    let core = n * topology.workers_per_node + w;
                    let pin = topology.pin;
                    handles.push(s.spawn(move || {
                        if pin {
                            pin_to_core(core);
                        }
                        while !stop.load(Ordering::Acquire) {
                            let Some(i) = take_work(node, w) else { break };
                            let msg = scan(cands[i].pid).map(|b| (i, b));
                            let failed = msg.is_err();
                            if tx.send(msg).is_err() || failed {
                                break;
                            }
                        }
                    }));
                }
            }
            drop(tx);

            let mut error = None;
            loop {
                match rx.recv_timeout(POLL) {
                    Ok(Ok((i, buf))) => {
                        absorb(i, &buf, &mut est, &mut global);
                        if done(&est) {
                            stop.store(true, Ordering::Release);
                        }
                    }
                    Ok(Err(e)) => {
                        stop.store(true, Ordering::Release);
                        error.get_or_insert(e);
                    }
                    Err(mpsc::RecvTimeoutError::Timeout) => continue,
                    Err(mpsc::RecvTimeoutError::Disconnected) => break,
                }
            }
            for h in handles {
                if h.join().is_err() {
                    error.get_or_insert_with(|| "worker thread panicked".to_string());
                }
            }
            error.map_or(Ok(()), Err)
        });
        outcome.map_err(Error::Worker)?;
    }

    let mut scanned = job.route.upper_scanned.clone();
    scanned.extend(processed.iter().map(|&i| (0, cands[i].pid)));
    let estimate = if global.is_full() {
        est.estimate()
    } else {
        1.0
    };
    Ok(SearchOutcome {
        result: global.to_result(),
        nprobe: processed.len(),
        scanned,
        recomputes: est.recomputes(),
        estimate,
        candidates: cands.len(),
    })
}

/// Total order key for probabilities in `[0, 1]`.
fn ordered(p: f64) -> u64 {
    p.max(0.0).to_bits()
}

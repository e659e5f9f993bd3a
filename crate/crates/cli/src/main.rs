use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use adaptive_ivf::engine::{Engine, EngineConfig, MaintenancePolicy};
use adaptive_ivf::io::{load_store, read_fvecs, read_ivecs, write_ivecs};
use adaptive_ivf::kernels::{brute_force_knn, recall_at_k, KnnResult, Metric};
use adaptive_ivf::maintenance::{profile_scan_latency, write_audit, LatencyProfile};
use adaptive_ivf::persist::save_index;
use adaptive_ivf::workload::{
    generate_trace, read_trace, replay, write_trace, OpKind, OpMetric, ReplayConfig, RunMetrics,
    WorkloadSpec,
};
use adaptive_ivf::{Error, MultiLevelIndex, Result, VectorStore};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "aivf",
    version,
    about = "Adaptive partitioned vector search toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from an fvecs dataset and write a snapshot.
    Build(BuildArgs),
    /// Measure partition scan latency over a size grid.
    Profile(ProfileArgs),
    /// Generate a workload trace from an fvecs dataset.
    Generate(GenerateArgs),
    /// Replay a trace, or evaluate a static query set, and write metrics.
    Run(RunArgs),
    /// Compute exact k-nearest-neighbor ground truth.
    Groundtruth(GroundtruthArgs),
}

/// Options shared by every command that builds or drives an engine.
#[derive(Args, Clone, Default)]
struct EngineFlags {
    /// JSON file with `engine`, `workload` and `replay` sections; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Partitions per level, bottom first, e.g. `1000` or `1000,32`.
    #[arg(long, value_delimiter = ',')]
    partitions: Option<Vec<usize>>,
    /// `l2` or `ip`.
    #[arg(long)]
    metric: Option<Metric>,
    /// Workers per node.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Fraction of partitions considered as candidates.
    #[arg(long = "f-m")]
    f_m: Option<f64>,
    /// Commit threshold in seconds.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    refine_radius: Option<usize>,
    /// Scan a fixed number of partitions instead of estimating recall.
    #[arg(long)]
    no_aps: bool,
    /// Fixed partition count used with `--no-aps`.
    #[arg(long)]
    nprobe: Option<usize>,
    #[arg(long)]
    no_maintenance: bool,
    #[arg(long)]
    no_refine: bool,
    /// Commit every tentative action without verification.
    #[arg(long)]
    no_reject: bool,
    /// Use size thresholds instead of the cost model.
    #[arg(long)]
    baseline_size_threshold: bool,
    /// Latency profile file; profiled at startup when absent.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Snapshot path; defaults to `<output-dir>/index.aivf`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineFlags,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value = "l2")]
    metric: Metric,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1,8,32,128,512,2048,8192,32768"
    )]
    grid: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    repetitions: usize,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to `<output-dir>/profile.json`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "l2")]
    metric: Metric,
    #[arg(long)]
    initial: Option<usize>,
    #[arg(long)]
    operations: Option<usize>,
    #[arg(long)]
    vectors_per_op: Option<usize>,
    #[arg(long)]
    queries_per_op: Option<usize>,
    /// Query, insert and delete fractions, e.g. `0.1,0.9,0`.
    #[arg(long, value_delimiter = ',')]
    mix: Option<Vec<f64>>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    skew: Option<f64>,
    #[arg(long)]
    sliding_window: Option<usize>,
    #[arg(long)]
    maintain_every: Option<usize>,
    /// Defaults to `<output-dir>/trace.jsonl`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Trace to replay.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Static mode: base vectors.
    #[arg(long, conflicts_with = "trace")]
    dataset: Option<PathBuf>,
    /// Static mode: query vectors.
    #[arg(long, requires = "dataset")]
    queries: Option<PathBuf>,
    /// Static mode: ivecs ground truth; brute force when absent.
    #[arg(long, requires = "queries")]
    groundtruth: Option<PathBuf>,
    /// One run per target.
    #[arg(long = "recall-target", value_delimiter = ',')]
    recall_targets: Vec<f64>,
    #[command(flatten)]
    engine: EngineFlags,
}

#[derive(Args)]
struct GroundtruthArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value = "l2")]
    metric: Metric,
    /// Defaults to `<output-dir>/groundtruth.ivecs`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    engine: EngineConfig,
    workload: WorkloadSpec,
    replay: ReplayConfig,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
        message: e.to_string(),
    })
}

impl EngineFlags {
    fn resolve(&self) -> Result<(EngineConfig, ReplayConfig, FileConfig)> {
        let file = load_config(self.config.as_deref())?;
        let mut c = file.engine.clone();
        let seed = self.seed.unwrap_or(if self.config.is_some() {
            c.build.seed
        } else {
            DEFAULT_SEED
        });
        c.build.seed = seed;
        c.maintenance.seed = seed;
        if let Some(p) = &self.partitions {
            c.build.partitions_per_level = p.clone();
        }
        if let Some(m) = self.metric {
            c.build.metric = m;
        }
        if let Some(t) = self.threads {
            c.topology.workers_per_node = t;
        }
        if let Some(n) = self.nodes {
            c.topology.nodes = n;
        }
        if let Some(k) = self.k {
            c.aps.k = k;
        }
        if let Some(f) = self.f_m {
            c.aps.initial_fraction = f;
        }
        if let Some(t) = self.tau {
            c.maintenance.tau = t;
        }
        if let Some(a) = self.alpha {
            c.maintenance.alpha = a;
        }
        if let Some(r) = self.refine_radius {
            c.maintenance.refine_radius = r;
        }
        if self.no_aps {
            c.use_aps = false;
        }
        if let Some(n) = self.nprobe {
            c.fixed_nprobe = Some(n);
        }
        if self.no_refine {
            c.maintenance.refine = false;
        }
        if self.no_reject {
            c.maintenance.reject = false;
        }
        if self.baseline_size_threshold {
            c.policy = MaintenancePolicy::SizeThreshold;
        }
        if self.no_maintenance {
            c.policy = MaintenancePolicy::Disabled;
        }
        let mut replay = file.replay.clone();
        replay.maintenance = c.policy != MaintenancePolicy::Disabled;
        c.validate()?;
        Ok((c, replay, file))
    }

    fn engine(&self, store: &VectorStore, config: EngineConfig) -> Result<Engine> {
        match &self.profile {
            None => Engine::build(store, config),
            Some(p) => {
                let profile = LatencyProfile::load(p)?;
                let index = MultiLevelIndex::build(store, &config.build)?;
                Engine::from_index(index, config, profile, Some(store))
            }
        }
    }
}

fn output_path(explicit: &Option<PathBuf>, dir: &Path, name: &str) -> Result<PathBuf> {
    match explicit {
        Some(p) => Ok(p.clone()),
        None => {
            fs::create_dir_all(dir)?;
            Ok(dir.join(name))
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| invalid(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn cmd_build(args: &BuildArgs) -> Result<()> {
    let (config, _, _) = args.engine.resolve()?;
    let store = load_store(&args.dataset)?;
    let start = Instant::now();
    let index = MultiLevelIndex::build(&store, &config.build)?;
    let out = output_path(&args.output, &args.engine.output_dir, "index.aivf")?;
    save_index(&out, &index)?;
    let levels: Vec<String> = (0..index.num_levels())
        .map(|l| index.partition_count(l).to_string())
        .collect();
    println!(
        "built vectors={} dim={} metric={} partitions={} seed={} seconds={:.3} output={}",
        index.len(),
        index.dim(),
        index.metric(),
        levels.join(","),
        config.build.seed,
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn cmd_profile(args: &ProfileArgs) -> Result<()> {
    let seed = args.seed.unwrap_or(DEFAULT_SEED);
    let profile = profile_scan_latency(
        args.dim,
        args.metric,
        &args.grid,
        args.repetitions,
        args.k,
        seed,
    )?;
    let out = output_path(&args.output, &args.output_dir, "profile.json")?;
    profile.save(&out)?;
    for (s, t) in profile.sizes().iter().zip(profile.seconds()) {
        println!("size={s} seconds={t:.3e}");
    }
    println!("seed={seed} output={}", out.display());
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let file = load_config(args.config.as_deref())?;
    let mut spec = file.workload;
    spec.seed = args.seed.unwrap_or(if args.config.is_some() {
        spec.seed
    } else {
        DEFAULT_SEED
    });
    if let Some(v) = args.initial {
        spec.initial_size = v;
    }
    if let Some(v) = args.operations {
        spec.operations = v;
    }
    if let Some(v) = args.vectors_per_op {
        spec.vectors_per_op = v;
    }
    if let Some(v) = args.queries_per_op {
        spec.queries_per_op = v;
    }
    if let Some(m) = &args.mix {
        let [q, i, d] = m[..] else {
            return Err(invalid("--mix takes three fractions: query,insert,delete"));
        };
        (
            spec.query_fraction,
            spec.insert_fraction,
            spec.delete_fraction,
        ) = (q, i, d);
    }
    if let Some(v) = args.clusters {
        spec.clusters = v;
    }
    if let Some(v) = args.skew {
        spec.skew = v;
    }
    if args.sliding_window.is_some() {
        spec.sliding_window = args.sliding_window;
    }
    if let Some(v) = args.maintain_every {
        spec.maintain_every = v;
    }
    let store = load_store(&args.dataset)?;
    let trace = generate_trace(&store, args.metric, &spec)?;
    let out = output_path(&args.output, &args.output_dir, "trace.jsonl")?;
    write_trace(&out, &trace)?;
    println!(
        "trace initial={} queries={} inserts={} deletes={} maintains={} seed={} output={}",
        trace.initial.len(),
        trace.count(OpKind::Query),
        trace.count(OpKind::Insert),
        trace.count(OpKind::Delete),
        trace.count(OpKind::Maintain),
        spec.seed,
        out.display()
    );
    Ok(())
}

fn static_run(
    engine: &mut Engine,
    store: &VectorStore,
    queries: &[f32],
    truth: &[KnnResult],
    seed: u64,
) -> Result<RunMetrics> {
    let dim = store.dim();
    let mut metrics = RunMetrics {
        seed,
        ..Default::default()
    };
    for (i, q) in queries.chunks_exact(dim).enumerate() {
        let start = Instant::now();
        let hit = engine.search(q)?;
        let seconds = start.elapsed().as_secs_f64();
        metrics.rows.push(OpMetric {
            seq: i,
            op: i,
            kind: OpKind::Query,
            vectors: 1,
            seconds,
            recall: Some(recall_at_k(&hit.result, &truth[i])),
            nprobe: Some(hit.nprobe),
            partitions: engine.index().partition_count(0),
            live: engine.len(),
        });
    }
    Ok(metrics)
}

fn load_truth(path: &Path, k: usize, n_queries: usize) -> Result<Vec<KnnResult>> {
    let rows = read_ivecs(path)?;
    if rows.len() != n_queries {
        return Err(invalid(format!(
            "ground truth has {} rows for {n_queries} queries",
            rows.len()
        )));
    }
    Ok(rows
        .into_iter()
        .map(|r| {
            let ids: Vec<u64> = r.into_iter().take(k).map(|x| x as u64).collect();
            KnnResult {
                scores: vec![0.0; ids.len()],
                ids,
            }
        })
        .collect())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let (config, replay_config, _) = args.engine.resolve()?;
    let targets = if args.recall_targets.is_empty() {
        vec![config.aps.recall_target]
    } else {
        args.recall_targets.clone()
    };
    let out_dir = &args.engine.output_dir;
    fs::create_dir_all(out_dir)?;

    enum Source {
        Trace(Box<adaptive_ivf::Trace>),
        Static {
            store: VectorStore,
            queries: Vec<f32>,
            truth: Vec<KnnResult>,
        },
    }
    let source = match (&args.trace, &args.dataset, &args.queries) {
        (Some(t), _, _) => Source::Trace(Box::new(read_trace(t)?)),
        (None, Some(d), Some(q)) => {
            let store = load_store(d)?;
            let (qdim, queries) = read_fvecs(q)?;
            if qdim != store.dim() {
                return Err(Error::DimensionMismatch {
                    expected: store.dim(),
                    got: qdim,
                });
            }
            let n = queries.len() / qdim;
            let truth = match &args.groundtruth {
                Some(g) => load_truth(g, config.aps.k, n)?,
                None => brute_force_knn(&queries, &store, config.aps.k, config.build.metric)?,
            };
            Source::Static {
                store,
                queries,
                truth,
            }
        }
        _ => return Err(invalid("run needs --trace, or --dataset with --queries")),
    };

    for target in targets {
        let mut cfg = config.clone();
        cfg.aps.recall_target = target;
        cfg.aps.validate()?;
        let metrics = match &source {
            Source::Trace(trace) => {
                cfg.build.metric = trace.header.metric;
                let mut engine = args.engine.engine(&trace.initial, cfg.clone())?;
                replay(trace, &mut engine, &replay_config)?
            }
            Source::Static {
                store,
                queries,
                truth,
            } => {
                let mut engine = args.engine.engine(store, cfg.clone())?;
                static_run(&mut engine, store, queries, truth, cfg.build.seed)?
            }
        };
        let tag = format!("{target}");
        let csv_path = out_dir.join(format!("metrics-{tag}.csv"));
        metrics.write_csv(BufWriter::new(File::create(&csv_path)?))?;
        write_audit(
            BufWriter::new(File::create(out_dir.join(format!("audit-{tag}.jsonl")))?),
            &metrics.actions,
        )?;
        let summary = metrics.summary();
        write_json(&out_dir.join(format!("summary-{tag}.json")), &summary)?;
        println!(
            "summary recall_target={target} queries={} mean_recall={:.4} recall_std={:.4} mean_nprobe={:.2} \
             search_s={:.4} update_s={:.4} maintenance_s={:.4} total_s={:.4} partitions={} committed={} rejected={} seed={}",
            summary.queries,
            summary.mean_recall,
            summary.recall_std,
            summary.mean_nprobe,
            summary.search_seconds,
            summary.update_seconds,
            summary.maintenance_seconds,
            summary.total_seconds,
            summary.final_partitions,
            summary.committed_actions,
            summary.rejected_actions,
            summary.seed,
        );
    }
    Ok(())
}

fn cmd_groundtruth(args: &GroundtruthArgs) -> Result<()> {
    let store = load_store(&args.dataset)?;
    let (qdim, queries) = read_fvecs(&args.queries)?;
    if qdim != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            got: qdim,
        });
    }
    let truth = brute_force_knn(&queries, &store, args.k, args.metric)?;
    let rows: Vec<Vec<i32>> = truth
        .iter()
        .map(|t| t.ids.iter().map(|&id| id as i32).collect())
        .collect();
    let out = output_path(&args.output, &args.output_dir, "groundtruth.ivecs")?;
    write_ivecs(&out, &rows)?;
    println!(
        "groundtruth queries={} k={} output={}",
        rows.len(),
        args.k,
        out.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Groundtruth(a) => cmd_groundtruth(a),
    }
}

fn report(kind: &str, message: &str) -> ExitCode {
    let one_line = message.trim().replace('\n', " ").replace('"', "'");
    eprintln!("error: kind={kind} message=\"{one_line}\"");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments");
            return report("usage", first.trim_start_matches("error: "));
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e.kind(), &e.to_string()),
    }
}

//! `qrelkit` command-line entry point.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qrelkit::atomic::{atomic_write, atomic_write_with};
use qrelkit::bench::{self, BenchReport};
use qrelkit::cache::ArtifactCache;
use qrelkit::dataset::{BinaryDataset, DatasetSpec, MultiLevelDataset};
use qrelkit::embedding::{EmbeddingCache, EmbeddingCacheBuilder, EncoderSpec};
use qrelkit::error::Side;
use qrelkit::inference::{
    mine_hard_negatives, plan_shards, read_trec_run, retrieve, write_qrels_tsv, write_trec_run, MiningConfig,
    RetrieveParams, ShardPlan, VectorSource,
};
use qrelkit::metrics::{evaluate, parse_metrics};
use qrelkit::qrels::{CollectionConfig, GroupedQrels, ScoreTransform};
use qrelkit::record::{RecordId, TextRecord};
use qrelkit::store::{open_or_build_cached, CacheOutcome, StoreHandle};

const DEFAULT_CACHE_DIR: &str = ".qrelkit-cache";

#[derive(Parser, Debug)]
#[command(name = "qrelkit", version, about = "Lazy IR dataset management, exact dense retrieval, and evaluation")]
struct Cli {
    /// Seed for fingerprints, sampling, and the hash-projection encoder.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Artifact cache directory. QRELKIT_CACHE_DIR takes precedence.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    /// Log filter, e.g. `info` or `qrelkit=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build (or reuse) memory-mapped stores for JSONL record files.
    BuildStore {
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
    /// Inspect or export a multi-level dataset.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Encode every record of a JSONL file into an embedding cache.
    Encode {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SideArg::Corpus)]
        side: SideArg,
        #[arg(long, default_value_t = 256)]
        dim: usize,
    },
    /// Exact top-k retrieval of queries against a corpus, written as a TREC run.
    Retrieve(RetrieveArgs),
    /// Score a TREC run against qrels.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "tsv")]
        qrel_format: String,
        #[arg(long, default_value = "ndcg@10,mrr@10,recall@100")]
        metrics: String,
        /// Include per-query values in the report.
        #[arg(long)]
        per_query: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mine hard negatives from a TREC run, skipping annotated positives.
    MineNegatives {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "tsv")]
        qrel_format: String,
        #[arg(long, default_value_t = 100)]
        depth: usize,
        #[arg(long, default_value_t = 7)]
        num: usize,
        /// Label written for each mined negative.
        #[arg(long, default_value_t = 0)]
        label: i32,
        /// Annotated labels at or above this are never mined.
        #[arg(long, default_value_t = 1)]
        positive_threshold: i32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one vector of an embedding cache as JSON.
    CacheGet {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        id: String,
    },
    /// Run a benchmark scenario and emit its JSON report.
    Bench(BenchArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Print query and collection counts.
    Info(DatasetArgs),
    /// Write one JSON line per example.
    Export {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Emit query, positive, and sampled negatives instead of all levels.
        #[arg(long)]
        binary: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Either a dataset spec file or a single collection described by flags.
#[derive(Args, Debug)]
struct DatasetArgs {
    /// Dataset spec JSON; relative paths resolve against its directory.
    #[arg(long, conflicts_with = "qrels")]
    spec: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long, default_value = "tsv")]
    qrel_format: String,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    query_subset: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    min_score: Option<i32>,
    #[arg(long, allow_hyphen_values = true)]
    max_score: Option<i32>,
    /// Integer label or a registered mapping name.
    #[arg(long, allow_hyphen_values = true)]
    score_transform: Option<String>,
    #[arg(long)]
    group_random_k: Option<usize>,
    /// Registered entry filter name.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    negatives_per_query: Option<usize>,
    #[arg(long)]
    positive_threshold: Option<i32>,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[arg(long, required_unless_present = "query_vectors")]
    queries: Option<PathBuf>,
    #[arg(long, required_unless_present = "corpus_vectors")]
    corpus: Option<PathBuf>,
    /// Embedding cache consulted before encoding query text.
    #[arg(long)]
    query_vectors: Option<PathBuf>,
    /// Embedding cache consulted before encoding corpus text.
    #[arg(long)]
    corpus_vectors: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    topk: usize,
    /// Equal-weight lanes; ignored when --weights is given.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Comma-separated relative lane weights, e.g. 3,1.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = qrelkit::inference::DEFAULT_BATCH_SIZE)]
    batch: usize,
    /// Encoder dimension when no vector cache fixes it.
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value = "qrelkit")]
    tag: String,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SideArg {
    Query,
    Corpus,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Side {
        match s {
            SideArg::Query => Side::Query,
            SideArg::Corpus => Side::Corpus,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Scenario {
    Topk,
    Memory,
    Ttfs,
    Scaling,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(value_enum)]
    scenario: Scenario,
    /// Scratch directory for fixtures; defaults to `<cache-dir>/bench`.
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    docs: Option<usize>,
    /// Judged documents per query in the qrel fixture.
    #[arg(long)]
    per_query: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    lanes: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct AppContext {
    seed: u64,
    cache: ArtifactCache,
    _lock: File,
}

fn cache_dir(cli: &Cli) -> PathBuf {
    match std::env::var_os("QRELKIT_CACHE_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cli.cache_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)),
    }
}

/// Opens the cache and holds its directory lock for the whole command.
fn open_context(cli: &Cli) -> Result<AppContext> {
    let dir = cache_dir(cli);
    let cache = ArtifactCache::open(&dir)?;
    let lock_path = dir.join(".lock");
    let lock = File::options()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_path)
        .with_context(|| format!("opening {}", lock_path.display()))?;
    lock.lock().with_context(|| format!("locking {}", lock_path.display()))?;
    Ok(AppContext {
        seed: cli.seed,
        cache,
        _lock: lock,
    })
}

fn outcome_word(o: CacheOutcome) -> &'static str {
    match o {
        CacheOutcome::Hit => "cache hit",
        CacheOutcome::Miss => "cache miss",
    }
}

fn open_store(ctx: &AppContext, path: &Path) -> Result<StoreHandle> {
    let (store, outcome, _) = open_or_build_cached(path, &ctx.cache, ctx.seed)?;
    eprintln!("{}: {} records ({})", path.display(), store.len(), outcome_word(outcome));
    Ok(store)
}

fn write_output(out: Option<&Path>, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match out {
        Some(path) => atomic_write_with(path, fill)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            fill(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn cmd_build_store(ctx: &AppContext, records: &[PathBuf]) -> Result<()> {
    for path in records {
        let (store, outcome, fp) = open_or_build_cached(path, &ctx.cache, ctx.seed)?;
        println!(
            "{}\t{} records\tfingerprint {}\t{}\t{}",
            path.display(),
            store.len(),
            fp,
            outcome_word(outcome),
            store.path().display()
        );
    }
    Ok(())
}

fn dataset_spec(args: &DatasetArgs, seed: u64) -> Result<DatasetSpec> {
    let mut spec = if let Some(path) = &args.spec {
        let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut spec: DatasetSpec =
            serde_json::from_str(&raw).map_err(|e| qrelkit::error::Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        spec.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        spec
    } else {
        let Some(qrels) = &args.qrels else {
            bail!(qrelkit::error::Error::InvalidConfig("give --spec or --qrels".into()));
        };
        let mut c = CollectionConfig::new(qrels);
        c.qrel_format = args.qrel_format.clone();
        c.query_subset_path = args.query_subset.clone();
        c.min_score = args.min_score;
        c.max_score = args.max_score;
        c.score_transform = args.score_transform.as_deref().map(|s| match s.parse::<i32>() {
            Ok(n) => ScoreTransform::Constant(n),
            Err(_) => ScoreTransform::Named(s.to_owned()),
        });
        c.group_random_k = args.group_random_k;
        c.filter_fn = args.filter.clone();
        let mut spec = DatasetSpec::new(vec![c], seed);
        spec.query_path = args.queries.clone();
        spec.corpus_path = args.corpus.clone();
        spec
    };
    if args.spec.is_none() {
        spec.seed = seed;
    }
    if let Some(n) = args.negatives_per_query {
        spec.negatives_per_query = n;
    }
    if let Some(t) = args.positive_threshold {
        spec.positive_threshold = t;
    }
    spec.validate()?;
    Ok(spec)
}

fn open_dataset(ctx: &AppContext, args: &DatasetArgs) -> Result<(MultiLevelDataset, DatasetSpec)> {
    let spec = dataset_spec(args, ctx.seed)?;
    let registry = qrelkit::qrels::Registry::new();
    let (ds, report) = MultiLevelDataset::open(&spec, &registry, &ctx.cache)?;
    for (path, outcome) in report.qrels.iter().chain(&report.stores) {
        eprintln!("{}: {}", path.display(), outcome_word(*outcome));
    }
    Ok((ds, spec))
}

fn record_json(r: &TextRecord) -> serde_json::Value {
    json!({"doc_id": r.id, "title": r.title, "text": r.text})
}

fn cmd_dataset(ctx: &AppContext, cmd: &DatasetCommand) -> Result<()> {
    match cmd {
        DatasetCommand::Info(args) => {
            let (ds, spec) = open_dataset(ctx, args)?;
            let collections: Vec<_> = ds
                .collections()
                .iter()
                .zip(&spec.collections)
                .map(|(c, cfg)| json!({"qrel_path": cfg.qrel_path, "queries": c.groups.len()}))
                .collect();
            let binary = BinaryDataset::new(ds.clone(), &spec)?;
            let info = json!({
                "queries": ds.len(),
                "collections": collections,
                "binary_queries": binary.len(),
                "binary_dropped": binary.dropped(),
            });
            println!("{}", serde_json::to_string_pretty(&info)?);
        }
        DatasetCommand::Export { dataset, binary, out } => {
            let (ds, spec) = open_dataset(ctx, dataset)?;
            if *binary {
                let bin = BinaryDataset::new(ds, &spec)?;
                let mut lines = Vec::with_capacity(bin.len());
                for i in 0..bin.len() {
                    let ex = bin.get(i)?;
                    lines.push(json!({
                        "query_id": ex.query.id,
                        "query": ex.query.full_text(),
                        "positive": record_json(&ex.positive),
                        "negatives": ex.negatives.iter().map(record_json).collect::<Vec<_>>(),
                    }));
                }
                write_output(out.as_deref(), |w| {
                    for line in &lines {
                        serde_json::to_writer(&mut *w, line)?;
                        w.write_all(b"\n")?;
                    }
                    Ok(())
                })?;
            } else {
                let mut buf = Vec::new();
                ds.export_jsonl(&mut buf)?;
                write_output(out.as_deref(), |w| w.write_all(&buf))?;
            }
        }
    }
    Ok(())
}

fn cmd_encode(ctx: &AppContext, records: &Path, out: &Path, side: SideArg, dim: usize) -> Result<()> {
    let store = Arc::new(open_store(ctx, records)?);
    let encoder = EncoderSpec::hash_projection(dim, ctx.seed).build()?;
    let mut builder = EmbeddingCacheBuilder::new(out, dim)?;
    let mut row = vec![0f32; dim];
    for i in 0..store.len() {
        let rec = store.record_at(i)?;
        encoder.encode_text_into(&rec.full_text(), &mut row);
        builder.cache_record(rec.id, &row)?;
    }
    let cache = builder.finalize()?;
    eprintln!("encoded {} {} records into {} (dim {dim})", cache.len(), Side::from(side), out.display());
    Ok(())
}

fn ids_of<'a>(store: Option<&'a StoreHandle>, cache: Option<&'a EmbeddingCache>) -> Result<Vec<RecordId>> {
    let ids: Vec<&str> = match (store, cache) {
        (Some(s), _) => s.ids().collect(),
        (None, Some(c)) => c.ids().collect(),
        (None, None) => Vec::new(),
    };
    Ok(ids.into_iter().map(RecordId::new).collect::<qrelkit::error::Result<_>>()?)
}

fn cmd_retrieve(ctx: &AppContext, a: &RetrieveArgs) -> Result<()> {
    let qstore = a.queries.as_deref().map(|p| open_store(ctx, p)).transpose()?;
    let cstore = a.corpus.as_deref().map(|p| open_store(ctx, p)).transpose()?;
    let qcache = a.query_vectors.as_deref().map(EmbeddingCache::open).transpose()?;
    let ccache = a.corpus_vectors.as_deref().map(EmbeddingCache::open).transpose()?;
    let dim = qcache
        .as_ref()
        .or(ccache.as_ref())
        .map_or(a.dim, |c| c.dim());
    let encoder = EncoderSpec::hash_projection(dim, ctx.seed).build()?;
    let qs = VectorSource::new(Side::Query, qstore.as_ref(), qcache.as_ref(), encoder.as_ref())?;
    let cs = VectorSource::new(Side::Corpus, cstore.as_ref(), ccache.as_ref(), encoder.as_ref())?;
    let qids = ids_of(qstore.as_ref(), qcache.as_ref())?;
    let cids = ids_of(cstore.as_ref(), ccache.as_ref())?;
    let plan = match &a.weights {
        Some(w) => plan_shards(cids.len(), w)?,
        None => ShardPlan::equal(cids.len(), a.workers)?,
    };
    let params = RetrieveParams {
        k: a.topk,
        batch_size: a.batch,
        plan,
    };
    let t = std::time::Instant::now();
    let out = retrieve(&qids, qs, &cids, cs, &params, None)?;
    write_trec_run(&out.run, &a.out, &a.tag)?;
    tracing::info!(elapsed_ms = t.elapsed().as_millis() as u64, "retrieval done");
    eprintln!(
        "{} queries x {} docs, top {} over {} lanes -> {}",
        qids.len(),
        cids.len(),
        a.topk,
        params.plan.assignments.len(),
        a.out.display()
    );
    Ok(())
}

fn load_grouped(ctx: &AppContext, path: &Path, format: &str) -> Result<GroupedQrels> {
    let registry = qrelkit::qrels::Registry::new();
    let grouped = GroupedQrels::load(path, format, &registry, &ctx.cache, ctx.seed)?;
    eprintln!("{}: {}", path.display(), outcome_word(grouped.outcome()));
    Ok(grouped)
}

fn cmd_evaluate(
    ctx: &AppContext,
    run: &Path,
    qrels: &Path,
    format: &str,
    metrics: &str,
    per_query: bool,
    out: Option<&Path>,
) -> Result<()> {
    let specs = parse_metrics(metrics)?;
    let run = read_trec_run(run)?;
    let grouped = load_grouped(ctx, qrels, format)?;
    let reports = evaluate(&run, &grouped, &specs)?;
    let reports: serde_json::Map<String, serde_json::Value> = reports
        .into_iter()
        .map(|(name, r)| {
            let r = if per_query { r } else { r.without_per_query() };
            (name, serde_json::to_value(r).expect("report serializes"))
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&reports)?;
    text.push('\n');
    match out {
        Some(path) => atomic_write(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_mine(
    ctx: &AppContext,
    run: &Path,
    qrels: &Path,
    format: &str,
    depth: usize,
    num: usize,
    label: i32,
    positive_threshold: i32,
    out: &Path,
) -> Result<()> {
    let cfg = MiningConfig {
        depth,
        num_negatives: num,
        negative_label: label,
        positive_threshold,
    };
    cfg.validate()?;
    let run = read_trec_run(run)?;
    let grouped = load_grouped(ctx, qrels, format)?;
    let mined = mine_hard_negatives(&run, &grouped, &cfg)?;
    write_qrels_tsv(&mined.triples, out)?;
    eprintln!(
        "mined {} negatives for {} queries ({} short) -> {}",
        mined.triples.len(),
        run.len(),
        mined.short_queries.len(),
        out.display()
    );
    for (q, n) in &mined.short_queries {
        tracing::warn!(query = %q, found = n, wanted = num, "fewer negatives than requested");
    }
    Ok(())
}

fn cmd_cache_get(cache: &Path, id: &str) -> Result<()> {
    let cache = EmbeddingCache::open(cache)?;
    let Some(v) = cache.get(id) else {
        bail!(qrelkit::error::Error::NotFound(RecordId::new(id)?));
    };
    println!("{}", serde_json::to_string(&json!({"id": id, "dim": cache.dim(), "vector": v}))?);
    Ok(())
}

fn cmd_bench(ctx: &AppContext, a: &BenchArgs) -> Result<()> {
    let workdir = a.workdir.clone().unwrap_or_else(|| ctx.cache.dir().join("bench"));
    fs::create_dir_all(&workdir).with_context(|| format!("creating {}", workdir.display()))?;
    let mut fixture = bench::FixtureParams {
        seed: ctx.seed,
        ..Default::default()
    };
    if let Some(q) = a.queries {
        fixture.queries = q;
    }
    if let Some(d) = a.docs {
        fixture.docs = d;
    }
    if let Some(p) = a.per_query {
        fixture.per_query = p;
    }
    let report: BenchReport = match a.scenario {
        Scenario::Topk => {
            let d = bench::TopkParams::default();
            bench::bench_topk(&bench::TopkParams {
                queries: a.queries.unwrap_or(d.queries),
                docs: a.docs.unwrap_or(d.docs),
                k: a.k.unwrap_or(d.k),
                batch: a.batch.unwrap_or(d.batch),
                repeats: a.repeats.unwrap_or(d.repeats),
                seed: ctx.seed,
            })?
        }
        Scenario::Memory => bench::bench_memory(
            &bench::MemoryParams {
                fixture,
                ..Default::default()
            },
            &workdir,
        )?,
        Scenario::Ttfs => bench::bench_ttfs(&bench::TtfsParams { fixture }, &workdir)?,
        Scenario::Scaling => {
            let d = bench::ScalingParams::default();
            bench::bench_scaling(
                &bench::ScalingParams {
                    docs: a.docs.unwrap_or(d.docs),
                    queries: a.queries.unwrap_or(d.queries),
                    dim: a.dim.unwrap_or(d.dim),
                    k: a.k.unwrap_or(d.k),
                    batch: a.batch.unwrap_or(d.batch),
                    lanes: a.lanes.clone().unwrap_or(d.lanes),
                    seed: ctx.seed,
                },
                &workdir,
            )?
        }
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    match &a.out {
        Some(path) => atomic_write(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::CacheGet { cache, id } = &cli.command {
        return cmd_cache_get(cache, id);
    }
    let ctx = open_context(cli)?;
    match &cli.command {
        Command::BuildStore { records } => cmd_build_store(&ctx, records),
        Command::Dataset(cmd) => cmd_dataset(&ctx, cmd),
        Command::Encode { records, out, side, dim } => cmd_encode(&ctx, records, out, *side, *dim),
        Command::Retrieve(args) => cmd_retrieve(&ctx, args),
        Command::Evaluate {
            run,
            qrels,
            qrel_format,
            metrics,
            per_query,
            out,
        } => cmd_evaluate(&ctx, run, qrels, qrel_format, metrics, *per_query, out.as_deref()),
        Command::MineNegatives {
            run,
            qrels,
            qrel_format,
            depth,
            num,
            label,
            positive_threshold,
            out,
        } => cmd_mine(&ctx, run, qrels, qrel_format, *depth, *num, *label, *positive_threshold, out),
        Command::CacheGet { .. } => unreachable!("handled above"),
        Command::Bench(args) => cmd_bench(&ctx, args),
    }
}

/// 2 for filesystem and usage problems, 1 for everything the data caused.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<qrelkit::error::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return 2;
        }
    }
    1
}

/// The error chain joined by ": ", skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}

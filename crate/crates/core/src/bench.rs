//! Benchmark scenarios: batched top-k against the per-element heap, lazy
//! versus eager record loading, cold versus warm dataset open, and lane
//! scaling of retrieval.
//!
//! Reports carry raw measurements next to every derived factor.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::cache::ArtifactCache;
use crate::dataset::{BinaryDataset, DatasetSpec, MultiLevelDataset};
use crate::embedding::HashProjectionEncoder;
use crate::error::{Error, Result, Side};
use crate::inference::{plan_shards, retrieve, write_trec_run_to, RetrieveParams, VectorSource};
use crate::qrels::{CollectionConfig, Registry};
use crate::record::{RecordId, TextRecord};
use crate::rng::derive_rng;
use crate::store::{build_store_at, StoreHandle};
use crate::synth;
use crate::topk::{NaiveHeapTopK, TopKState};

#[derive(Debug, Clone, Default, Serialize)]
pub struct BenchReport {
    pub scenario: String,
    pub parameters: serde_json::Value,
    pub timings_ms: BTreeMap<String, f64>,
    pub counters: BTreeMap<String, u64>,
    pub factors: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
}

impl BenchReport {
    fn new(scenario: &str, parameters: serde_json::Value) -> Self {
        BenchReport {
            scenario: scenario.to_owned(),
            parameters,
            ..Default::default()
        }
    }

    fn time(&mut self, name: &str, ms: f64) {
        self.timings_ms.insert(name.to_owned(), ms);
    }

    fn count(&mut self, name: &str, n: u64) {
        self.counters.insert(name.to_owned(), n);
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, Serialize)]
pub struct TopkParams {
    pub queries: usize,
    pub docs: usize,
    pub k: usize,
    pub batch: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for TopkParams {
    fn default() -> Self {
        TopkParams {
            queries: 64,
            docs: 100_000,
            k: 100,
            batch: 4096,
            repeats: 3,
            seed: 42,
        }
    }
}

/// Times the batched engine and the naive heap on the same score stream.
pub fn bench_topk(p: &TopkParams) -> Result<BenchReport> {
    if p.k == 0 {
        return Err(Error::InvalidK);
    }
    if p.batch == 0 || p.repeats == 0 {
        return Err(Error::InvalidConfig("batch and repeats must be at least 1".into()));
    }
    let mut rng = derive_rng(p.seed, &[b"bench-topk"]);
    let ids: Vec<RecordId> = (0..p.docs).map(|i| RecordId::new(&synth::doc_id(i)).unwrap()).collect();
    let qids: Vec<RecordId> = (0..p.queries).map(|i| RecordId::new(&synth::query_id(i)).unwrap()).collect();
    let batches: Vec<(std::ops::Range<usize>, Vec<f32>)> = (0..p.docs)
        .step_by(p.batch)
        .map(|start| {
            let end = (start + p.batch).min(p.docs);
            let m = (0..p.queries * (end - start)).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            (start..end, m)
        })
        .collect();

    let mut batched_best = f64::INFINITY;
    let mut batched_out = Vec::new();
    for _ in 0..p.repeats {
        let t = Instant::now();
        let mut st = TopKState::new(qids.clone(), p.k)?;
        for (r, m) in &batches {
            st.update(&ids[r.clone()], m)?;
        }
        batched_out = st.finalize();
        batched_best = batched_best.min(ms_since(t));
    }
    let mut naive_best = f64::INFINITY;
    let mut naive_out = Vec::new();
    for _ in 0..p.repeats.min(2) {
        let t = Instant::now();
        let mut heap = NaiveHeapTopK::new(p.queries, p.k);
        for (r, m) in &batches {
            heap.update(&ids[r.clone()], m);
        }
        naive_out = heap.finalize();
        naive_best = naive_best.min(ms_since(t));
    }

    let mut rep = BenchReport::new("topk", serde_json::to_value(p).unwrap());
    rep.time("batched_best", batched_best);
    rep.time("naive_heap_best", naive_best);
    rep.count("scored_pairs", (p.queries * p.docs) as u64);
    rep.factors.insert("speedup".into(), naive_best / batched_best.max(1e-9));
    rep.checks.insert("identical_results".into(), batched_out == naive_out);
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureParams {
    pub queries: usize,
    pub per_query: usize,
    pub docs: usize,
    pub seed: u64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            queries: 10_000,
            per_query: 100,
            docs: 100_000,
            seed: 42,
        }
    }
}

/// Creates (or reuses) the synthetic qrel fixture under `dir`.
pub fn ensure_qrel_fixture(dir: &Path, p: &FixtureParams) -> Result<synth::QrelFixture> {
    let stamp = dir.join("fixture.json");
    let want = serde_json::to_string(p).unwrap();
    if fs::read_to_string(&stamp).ok().as_deref() == Some(want.as_str()) {
        return Ok(synth::QrelFixture {
            queries: dir.join("queries.jsonl"),
            corpus: dir.join("corpus.jsonl"),
            qrels: dir.join("qrels.tsv"),
            triples: (p.queries * p.per_query.min(p.docs)) as u64,
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let fx = synth::qrel_fixture(dir, p.queries, p.per_query, p.docs, p.seed)?;
    fs::write(&stamp, want).map_err(|e| Error::io_at(&stamp, e))?;
    Ok(fx)
}

fn single_collection_spec(fx: &synth::QrelFixture, seed: u64, negatives: usize) -> DatasetSpec {
    let mut spec = DatasetSpec::new(vec![CollectionConfig::new(&fx.qrels)], seed);
    spec.query_path = Some(fx.queries.clone());
    spec.corpus_path = Some(fx.corpus.clone());
    spec.negatives_per_query = negatives;
    spec
}

/// Loads every record of a JSONL file into memory, the way a non-lazy
/// pipeline would before serving its first example.
#[derive(Debug, Default)]
pub struct EagerBaseline {
    pub records: HashMap<String, TextRecord>,
    pub decoded: u64,
    pub text_bytes: u64,
}

impl EagerBaseline {
    pub fn load(paths: &[&Path]) -> Result<Self> {
        let mut out = EagerBaseline::default();
        for path in paths {
            let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io_at(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec = crate::record::parse_jsonl_record(path, n as u64 + 1, &line)?;
                out.decoded += 1;
                out.text_bytes += text_bytes(&rec);
                out.records.insert(rec.id.to_string(), rec);
            }
        }
        Ok(out)
    }
}

fn text_bytes(rec: &TextRecord) -> u64 {
    (rec.text.len() + rec.title.as_ref().map_or(0, String::len)) as u64
}

#[derive(Debug, Clone, Serialize)]
pub struct MemoryParams {
    pub fixture: FixtureParams,
    pub negatives_per_query: usize,
    /// Share of the dataset iterated, in (0, 1].
    pub fraction: f64,
}

impl Default for MemoryParams {
    fn default() -> Self {
        MemoryParams {
            fixture: FixtureParams::default(),
            negatives_per_query: 7,
            fraction: 0.01,
        }
    }
}

/// Decode counters of the lazy binary dataset against the eager baseline.
pub fn bench_memory(p: &MemoryParams, workdir: &Path) -> Result<BenchReport> {
    if !(p.fraction > 0.0 && p.fraction <= 1.0) {
        return Err(Error::InvalidConfig("fraction must be in (0, 1]".into()));
    }
    let fx = ensure_qrel_fixture(&workdir.join("fixture"), &p.fixture)?;
    let cache = ArtifactCache::open(workdir.join("cache"))?;
    let registry = Registry::new();
    let spec = single_collection_spec(&fx, p.fixture.seed, p.negatives_per_query);

    let t = Instant::now();
    let (ml, _) = MultiLevelDataset::open(&spec, &registry, &cache)?;
    let bin = BinaryDataset::new(ml.clone(), &spec)?;
    let open_ms = ms_since(t);
    let col = &ml.collections()[0];
    let (qstore, cstore) = (col.queries.clone(), col.corpus.clone());
    let decodes = |q: &StoreHandle, c: &StoreHandle| q.decoded() + c.decoded();
    let after_open = decodes(&qstore, &cstore);

    let step = ((1.0 / p.fraction).round() as usize).max(1);
    let t = Instant::now();
    let mut references = 0u64;
    let mut distinct: HashSet<String> = HashSet::new();
    let mut lazy_bytes = 0u64;
    let mut examples = 0u64;
    for i in (0..bin.len()).step_by(step) {
        let ex = bin.get(i)?;
        examples += 1;
        for rec in std::iter::once(&ex.query).chain([&ex.positive]).chain(&ex.negatives) {
            references += 1;
            lazy_bytes += text_bytes(rec);
            distinct.insert(rec.id.to_string());
        }
    }
    let iterate_ms = ms_since(t);
    let lazy = decodes(&qstore, &cstore) - after_open;

    // Multi-level examples carry every judged doc; reported for reference.
    let before_ml = decodes(&qstore, &cstore);
    let mut ml_examples = 0u64;
    for i in (0..ml.len()).step_by(step) {
        ml.get_example(i)?;
        ml_examples += 1;
    }
    let ml_decodes = decodes(&qstore, &cstore) - before_ml;

    let t = Instant::now();
    let eager_corpus = EagerBaseline::load(&[&fx.corpus])?;
    let eager_queries = EagerBaseline::load(&[&fx.queries])?;
    let eager_ms = ms_since(t);
    let eager_total = eager_corpus.decoded + eager_queries.decoded;

    let mut rep = BenchReport::new("memory", serde_json::to_value(p).unwrap());
    rep.time("lazy_open", open_ms);
    rep.time("lazy_iterate", iterate_ms);
    rep.time("eager_load", eager_ms);
    rep.count("triples", fx.triples);
    rep.count("examples_iterated", examples);
    rep.count("decodes_during_open", after_open);
    rep.count("lazy_decodes", lazy);
    rep.count("record_references", references);
    rep.count("distinct_records_touched", distinct.len() as u64);
    rep.count("lazy_text_bytes", lazy_bytes);
    rep.count("eager_corpus_decodes", eager_corpus.decoded);
    rep.count("eager_total_decodes", eager_total);
    rep.count("eager_text_bytes", eager_corpus.text_bytes + eager_queries.text_bytes);
    rep.count("multilevel_examples_iterated", ml_examples);
    rep.count("multilevel_decodes", ml_decodes);
    let ratio = lazy as f64 / eager_corpus.decoded.max(1) as f64;
    rep.factors.insert("lazy_over_eager_corpus".into(), ratio);
    rep.factors.insert(
        "eager_over_lazy_bytes".into(),
        (eager_corpus.text_bytes + eager_queries.text_bytes) as f64 / lazy_bytes.max(1) as f64,
    );
    rep.factors
        .insert("multilevel_over_eager_corpus".into(), ml_decodes as f64 / eager_corpus.decoded.max(1) as f64);
    rep.checks.insert("no_decodes_during_open".into(), after_open == 0);
    rep.checks.insert("lazy_decodes_le_references".into(), lazy <= references);
    rep.checks
        .insert("eager_decodes_whole_corpus".into(), eager_corpus.decoded == p.fixture.docs as u64);
    rep.checks.insert("lazy_below_2pct_of_eager".into(), ratio < 0.02);
    Ok(rep)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TtfsParams {
    pub fixture: FixtureParams,
}

/// Cold (empty cache) versus warm dataset open to first example, then a
/// changed qrel file to confirm the cold path is retaken.
pub fn bench_ttfs(p: &TtfsParams, workdir: &Path) -> Result<BenchReport> {
    let fx = ensure_qrel_fixture(&workdir.join("fixture"), &p.fixture)?;
    let cache_dir = workdir.join("ttfs-cache");
    if cache_dir.exists() {
        fs::remove_dir_all(&cache_dir).map_err(|e| Error::io_at(&cache_dir, e))?;
    }
    let cache = ArtifactCache::open(&cache_dir)?;
    let registry = Registry::new();
    let spec = single_collection_spec(&fx, p.fixture.seed, 1);
    let first_sample = |spec: &DatasetSpec| -> Result<(f64, bool, bool)> {
        let t = Instant::now();
        let (ds, report) = MultiLevelDataset::open(spec, &registry, &cache)?;
        ds.get_example(0)?;
        let qrels_hit = report.qrels.iter().all(|(_, o)| *o == crate::store::CacheOutcome::Hit);
        Ok((ms_since(t), qrels_hit, report.all_hits()))
    };

    let (cold, cold_qrels_hit, _) = first_sample(&spec)?;
    let mut warm = f64::INFINITY;
    let mut warm_all_hits = true;
    for _ in 0..3 {
        let (ms, _, all) = first_sample(&spec)?;
        warm = warm.min(ms);
        warm_all_hits &= all;
    }

    // Same content plus one extra judgment under a new name.
    let changed = workdir.join("qrels-changed.tsv");
    fs::copy(&fx.qrels, &changed).map_err(|e| Error::io_at(&changed, e))?;
    {
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&changed)
            .map_err(|e| Error::io_at(&changed, e))?;
        writeln!(f, "{}\t{}\t1", synth::query_id(0), synth::doc_id(0)).map_err(|e| Error::io_at(&changed, e))?;
    }
    let mut changed_spec = spec.clone();
    changed_spec.collections[0].qrel_path = changed.clone();
    let (changed_ms, changed_qrels_hit, _) = first_sample(&changed_spec)?;
    // Same path, rewritten content.
    let rewritten = workdir.join("qrels-rewritten.tsv");
    fs::copy(&fx.qrels, &rewritten).map_err(|e| Error::io_at(&rewritten, e))?;
    let mut rw_spec = spec.clone();
    rw_spec.collections[0].qrel_path = rewritten.clone();
    let (_, rw_first_hit, _) = first_sample(&rw_spec)?;
    {
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&rewritten)
            .map_err(|e| Error::io_at(&rewritten, e))?;
        writeln!(f, "{}\t{}\t2", synth::query_id(0), synth::doc_id(1)).map_err(|e| Error::io_at(&rewritten, e))?;
    }
    let (_, rw_changed_hit, _) = first_sample(&rw_spec)?;

    let mut rep = BenchReport::new("ttfs", serde_json::to_value(p).unwrap());
    rep.time("cold_first_sample", cold);
    rep.time("warm_first_sample_best", warm);
    rep.time("changed_input_first_sample", changed_ms);
    rep.count("triples", fx.triples);
    rep.factors.insert("warm_over_cold".into(), warm / cold.max(1e-9));
    rep.checks.insert("cold_was_miss".into(), !cold_qrels_hit);
    rep.checks.insert("warm_all_hits".into(), warm_all_hits);
    rep.checks.insert("changed_input_miss".into(), !changed_qrels_hit);
    // Identical content under another path is a hit; rewriting it is a miss.
    rep.checks.insert("same_content_hit".into(), rw_first_hit);
    rep.checks.insert("rewritten_content_miss".into(), !rw_changed_hit);
    rep.checks.insert("warm_below_25pct".into(), warm / cold.max(1e-9) < 0.25);
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingParams {
    pub docs: usize,
    pub queries: usize,
    pub dim: usize,
    pub k: usize,
    pub batch: usize,
    pub lanes: Vec<usize>,
    pub seed: u64,
}

impl Default for ScalingParams {
    fn default() -> Self {
        ScalingParams {
            docs: 20_000,
            queries: 64,
            dim: 128,
            k: 100,
            batch: 4096,
            lanes: vec![1, 2, 4, 8],
            seed: 42,
        }
    }
}

/// Opens query and corpus stores for a retrieval fixture under `dir`.
pub fn retrieval_stores(dir: &Path, docs: usize, queries: usize, seed: u64) -> Result<(StoreHandle, StoreHandle)> {
    fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let (q, c) = synth::retrieval_fixture(dir, docs, queries, seed)?;
    let qs = build_store_at(&q, &dir.join("queries.qkst"))?;
    let cs = build_store_at(&c, &dir.join("corpus.qkst"))?;
    Ok((qs, cs))
}

fn all_ids(store: &StoreHandle) -> Result<Vec<RecordId>> {
    store.ids().map(RecordId::new).collect()
}

/// Retrieval wall time for each lane count on one workload.
pub fn bench_scaling(p: &ScalingParams, workdir: &Path) -> Result<BenchReport> {
    let (qs, cs) = retrieval_stores(&workdir.join("retrieval"), p.docs, p.queries, p.seed)?;
    let enc = HashProjectionEncoder::new(p.dim, p.seed);
    let (qids, cids) = (all_ids(&qs)?, all_ids(&cs)?);
    let mut rep = BenchReport::new("scaling", serde_json::to_value(p).unwrap());
    let mut outputs: Vec<Vec<u8>> = Vec::new();
    let mut times = Vec::new();
    for &w in &p.lanes {
        let params = RetrieveParams {
            k: p.k,
            batch_size: p.batch,
            plan: plan_shards(cids.len(), &vec![1.0; w.max(1)])?,
        };
        let qsrc = VectorSource::new(Side::Query, Some(&qs), None, &enc)?;
        let csrc = VectorSource::new(Side::Corpus, Some(&cs), None, &enc)?;
        let t = Instant::now();
        let out = retrieve(&qids, qsrc, &cids, csrc, &params, None)?;
        let ms = ms_since(t);
        rep.time(&format!("lanes_{w}"), ms);
        times.push(ms);
        let mut buf = Vec::new();
        write_trec_run_to(&out.run, "scaling", &mut buf)?;
        outputs.push(buf);
    }
    if let Some(&base) = times.first() {
        for (&w, &ms) in p.lanes.iter().zip(&times) {
            rep.factors.insert(format!("speedup_lanes_{w}"), base / ms.max(1e-9));
        }
    }
    rep.count(
        "available_parallelism",
        std::thread::available_parallelism().map_or(1, |n| n.get()) as u64,
    );
    rep.checks
        .insert("identical_runs".into(), outputs.windows(2).all(|w| w[0] == w[1]));
    // Informational: timing noise on shared machines can break this.
    rep.checks.insert(
        "non_increasing_wall_time".into(),
        times.windows(2).all(|w| w[1] <= w[0] * 1.05),
    );
    Ok(rep)
}

/// Parameters for every scenario, serialized into the report.
pub fn describe_defaults() -> serde_json::Value {
    json!({
        "topk": TopkParams::default(),
        "memory": MemoryParams::default(),
        "ttfs": TtfsParams::default(),
        "scaling": ScalingParams::default(),
    })
}

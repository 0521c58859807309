//! Datasets assembled from one or more transformed qrel collections.
//!
//! Nothing here decodes text until an example is requested; building a
//! dataset only touches query ids and grouped qrel payloads.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cache::ArtifactCache;
use crate::embedding::EmbeddingCache;
use crate::error::{Error, Result, Side};
use crate::qrels::{apply_config, fetch, CollectionConfig, GroupSource, GroupedQrels, Registry};
use crate::record::{RecordId, TextRecord};
use crate::rng::{derive_rng, sample_positions};
use crate::store::{open_or_build_cached, CacheOutcome, StoreHandle};

fn default_threshold() -> i32 {
    1
}

fn default_negatives() -> usize {
    1
}

/// Ordered collections plus dataset-level settings.
///
/// `query_path` and `corpus_path` are fallbacks for collections that do not
/// name their own record files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub collections: Vec<CollectionConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub positive_threshold: i32,
    #[serde(default = "default_negatives")]
    pub negatives_per_query: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn new(collections: Vec<CollectionConfig>, seed: u64) -> Self {
        DatasetSpec {
            collections,
            seed,
            positive_threshold: default_threshold(),
            negatives_per_query: default_negatives(),
            query_path: None,
            corpus_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.collections.is_empty() {
            return Err(Error::InvalidConfig("a dataset needs at least one collection".into()));
        }
        if self.negatives_per_query == 0 {
            return Err(Error::InvalidConfig("negatives_per_query must be at least 1".into()));
        }
        self.collections.iter().try_for_each(CollectionConfig::validate)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for c in &mut self.collections {
            c.resolve_paths(base);
        }
        for p in [&mut self.query_path, &mut self.corpus_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Opens each JSONL record file once, through the artifact cache.
#[derive(Debug)]
pub struct StoreResolver {
    cache: ArtifactCache,
    seed: u64,
    opened: HashMap<PathBuf, Arc<StoreHandle>>,
    outcomes: Vec<(PathBuf, CacheOutcome)>,
}

impl StoreResolver {
    pub fn new(cache: ArtifactCache, seed: u64) -> Self {
        StoreResolver {
            cache,
            seed,
            opened: HashMap::new(),
            outcomes: Vec::new(),
        }
    }

    pub fn resolve(&mut self, records_path: &Path) -> Result<Arc<StoreHandle>> {
        if let Some(store) = self.opened.get(records_path) {
            return Ok(store.clone());
        }
        let (store, outcome, _) = open_or_build_cached(records_path, &self.cache, self.seed)?;
        let store = Arc::new(store);
        self.opened.insert(records_path.to_path_buf(), store.clone());
        self.outcomes.push((records_path.to_path_buf(), outcome));
        Ok(store)
    }

    /// Cache outcome of every store opened so far, in open order.
    pub fn outcomes(&self) -> &[(PathBuf, CacheOutcome)] {
        &self.outcomes
    }
}

/// One transformed collection with the stores its ids resolve against.
#[derive(Clone)]
pub struct Collection {
    pub groups: Arc<dyn GroupSource>,
    pub queries: Arc<StoreHandle>,
    pub corpus: Arc<StoreHandle>,
}

impl std::fmt::Debug for Collection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Collection")
            .field("groups", &self.groups.len())
            .field("queries", &self.queries.path())
            .field("corpus", &self.corpus.path())
            .finish()
    }
}

/// What opening a dataset had to build versus reuse.
#[derive(Debug, Clone, Default, Serialize)]
pub struct OpenReport {
    pub qrels: Vec<(PathBuf, CacheOutcome)>,
    pub stores: Vec<(PathBuf, CacheOutcome)>,
}

impl OpenReport {
    pub fn all_hits(&self) -> bool {
        self.qrels
            .iter()
            .chain(&self.stores)
            .all(|(_, o)| *o == CacheOutcome::Hit)
    }
}

/// Loads every collection of `spec`: grouped qrels through the cache, the
/// config transforms, and the record stores.
pub fn open_collections(
    spec: &DatasetSpec,
    registry: &Registry,
    cache: &ArtifactCache,
) -> Result<(Vec<Collection>, OpenReport)> {
    spec.validate()?;
    let mut resolver = StoreResolver::new(cache.clone(), spec.seed);
    let mut report = OpenReport::default();
    let mut out = Vec::with_capacity(spec.collections.len());
    for cfg in &spec.collections {
        let grouped = GroupedQrels::load(&cfg.qrel_path, &cfg.qrel_format, registry, cache, spec.seed)?;
        report.qrels.push((cfg.qrel_path.clone(), grouped.outcome()));
        let view = apply_config(Arc::new(grouped), cfg, registry, spec.seed)?;
        let pick = |own: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str| {
            own.clone().or_else(|| fallback.clone()).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "collection {} has no {what} path and the dataset sets no default",
                    cfg.qrel_path.display()
                ))
            })
        };
        let queries = resolver.resolve(&pick(&cfg.query_path, &spec.query_path, "query")?)?;
        let corpus = resolver.resolve(&pick(&cfg.corpus_path, &spec.corpus_path, "corpus")?)?;
        out.push(Collection {
            groups: Arc::new(view),
            queries,
            corpus,
        });
    }
    report.stores = resolver.outcomes().to_vec();
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiLevelExample {
    pub query: TextRecord,
    /// Sorted by (label desc, doc id asc).
    pub docs: Vec<(TextRecord, i32)>,
}

/// A merged (doc id, label) entry and the collection it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDoc {
    pub doc_id: RecordId,
    pub label: i32,
    pub collection: usize,
}

#[derive(Debug, Clone)]
struct MergedQuery {
    query_id: RecordId,
    /// (collection index, group position), collection index ascending.
    sources: Vec<(u32, u32)>,
}

/// Per-query union of collections; the earliest collection wins on a
/// (query, doc) collision. Queries iterate in id order.
#[derive(Debug, Clone)]
pub struct MultiLevelDataset {
    collections: Vec<Collection>,
    queries: Vec<MergedQuery>,
}

impl MultiLevelDataset {
    pub fn new(collections: Vec<Collection>) -> Result<Self> {
        if collections.is_empty() {
            return Err(Error::InvalidConfig("a dataset needs at least one collection".into()));
        }
        let mut merged: BTreeMap<&str, Vec<(u32, u32)>> = BTreeMap::new();
        for (ci, c) in collections.iter().enumerate() {
            for pos in 0..c.groups.len() {
                merged
                    .entry(c.groups.query_id(pos))
                    .or_default()
                    .push((ci as u32, pos as u32));
            }
        }
        let queries = merged
            .into_iter()
            .map(|(qid, sources)| {
                Ok(MergedQuery {
                    query_id: RecordId::new(qid)?,
                    sources,
                })
            })
            .collect::<Result<_>>()?;
        Ok(MultiLevelDataset { collections, queries })
    }

    pub fn open(spec: &DatasetSpec, registry: &Registry, cache: &ArtifactCache) -> Result<(Self, OpenReport)> {
        let (collections, report) = open_collections(spec, registry, cache)?;
        Ok((Self::new(collections)?, report))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn collections(&self) -> &[Collection] {
        &self.collections
    }

    pub fn query_id(&self, i: usize) -> &RecordId {
        &self.queries[i].query_id
    }

    pub fn position(&self, query_id: &str) -> Option<usize> {
        self.queries
            .binary_search_by(|q| q.query_id.as_str().cmp(query_id))
            .ok()
    }

    fn check(&self, i: usize) -> Result<&MergedQuery> {
        self.queries.get(i).ok_or(Error::OutOfRange {
            index: i,
            len: self.queries.len(),
        })
    }

    /// Merged labels for query `i`, sorted by (label desc, doc id asc).
    /// Decodes grouped qrels only, never text.
    pub fn labels(&self, i: usize) -> Result<Vec<LabeledDoc>> {
        let q = self.check(i)?;
        let mut by_doc: BTreeMap<RecordId, (i32, usize)> = BTreeMap::new();
        for &(ci, pos) in &q.sources {
            let group = self.collections[ci as usize].groups.group(pos as usize)?;
            for (doc, label) in group.entries {
                by_doc.entry(doc).or_insert((label, ci as usize));
            }
        }
        let mut docs: Vec<LabeledDoc> = by_doc
            .into_iter()
            .map(|(doc_id, (label, collection))| LabeledDoc {
                doc_id,
                label,
                collection,
            })
            .collect();
        docs.sort_by(|a, b| b.label.cmp(&a.label).then_with(|| a.doc_id.cmp(&b.doc_id)));
        Ok(docs)
    }

    /// The query record, from the earliest collection holding the query.
    pub fn query_record(&self, i: usize) -> Result<TextRecord> {
        let q = self.check(i)?;
        let first = q.sources[0].0 as usize;
        fetch(&self.collections[first].queries, Side::Query, &q.query_id)
    }

    pub fn doc_record(&self, doc: &LabeledDoc) -> Result<TextRecord> {
        fetch(&self.collections[doc.collection].corpus, Side::Corpus, &doc.doc_id)
    }

    /// Decodes exactly one query record and one record per merged doc.
    pub fn get_example(&self, i: usize) -> Result<MultiLevelExample> {
        let labels = self.labels(i)?;
        let query = self.query_record(i)?;
        let docs = labels
            .iter()
            .map(|d| Ok((self.doc_record(d)?, d.label)))
            .collect::<Result<_>>()?;
        Ok(MultiLevelExample { query, docs })
    }

    /// Writes one JSON line per example, in dataset order.
    pub fn export_jsonl(&self, out: &mut dyn Write) -> Result<()> {
        for i in 0..self.len() {
            let line = serde_json::to_string(&example_json(&self.get_example(i)?))
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// The export shape of one example.
pub fn example_json(ex: &MultiLevelExample) -> serde_json::Value {
    json!({
        "query_id": ex.query.id,
        "query": ex.query.full_text(),
        "docs": ex.docs.iter().map(|(d, label)| json!({
            "doc_id": d.id,
            "label": label,
            "title": d.title,
            "text": d.text,
        })).collect::<Vec<_>>(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryExample {
    pub query: TextRecord,
    pub positive: TextRecord,
    pub negatives: Vec<TextRecord>,
    /// Fewer negatives were available than requested.
    pub short: bool,
}

/// Query, positive, and sampled negatives drawn from a multi-level dataset.
#[derive(Debug, Clone)]
pub struct BinaryDataset {
    inner: MultiLevelDataset,
    kept: Vec<u32>,
    dropped: usize,
    positive_threshold: i32,
    negatives_per_query: usize,
    seed: u64,
}

impl BinaryDataset {
    /// Keeps queries with at least one label `>= positive_threshold` and at
    /// least one below it; the rest are counted in `dropped`.
    pub fn new(inner: MultiLevelDataset, spec: &DatasetSpec) -> Result<Self> {
        if spec.negatives_per_query == 0 {
            return Err(Error::InvalidConfig("negatives_per_query must be at least 1".into()));
        }
        let thr = spec.positive_threshold;
        let mut kept = Vec::new();
        for i in 0..inner.len() {
            let labels = inner.labels(i)?;
            if labels.iter().any(|d| d.label >= thr) && labels.iter().any(|d| d.label < thr) {
                kept.push(i as u32);
            }
        }
        let dropped = inner.len() - kept.len();
        if dropped > 0 {
            tracing::info!(dropped, "queries without both a positive and a negative were dropped");
        }
        Ok(BinaryDataset {
            inner,
            kept,
            dropped,
            positive_threshold: thr,
            negatives_per_query: spec.negatives_per_query,
            seed: spec.seed,
        })
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn inner(&self) -> &MultiLevelDataset {
        &self.inner
    }

    pub fn query_id(&self, i: usize) -> &RecordId {
        self.inner.query_id(self.kept[i] as usize)
    }

    /// Positive and negative choices for example `i`, without decoding text.
    pub fn selection(&self, i: usize) -> Result<(LabeledDoc, Vec<LabeledDoc>)> {
        let at = *self.kept.get(i).ok_or(Error::OutOfRange {
            index: i,
            len: self.kept.len(),
        })? as usize;
        // Sorted (label desc, doc asc): the first entry is the positive.
        let labels = self.inner.labels(at)?;
        let positive = labels[0].clone();
        let mut negatives: Vec<LabeledDoc> = labels
            .into_iter()
            .filter(|d| d.label < self.positive_threshold)
            .collect();
        negatives.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let qid = self.inner.query_id(at);
        let mut rng = derive_rng(self.seed, &[b"bin", qid.as_str().as_bytes()]);
        let picks = sample_positions(&mut rng, negatives.len(), self.negatives_per_query);
        let negatives = picks.into_iter().map(|p| negatives[p].clone()).collect();
        Ok((positive, negatives))
    }

    pub fn get(&self, i: usize) -> Result<BinaryExample> {
        let (positive, negatives) = self.selection(i)?;
        let query = self.inner.query_record(self.kept[i] as usize)?;
        let short = negatives.len() < self.negatives_per_query;
        Ok(BinaryExample {
            query,
            positive: self.inner.doc_record(&positive)?,
            negatives: negatives
                .iter()
                .map(|d| self.inner.doc_record(d))
                .collect::<Result<_>>()?,
            short,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncodingPayload {
    Vector(Vec<f32>),
    Text(TextRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingItem {
    pub id: RecordId,
    pub payload: EncodingPayload,
}

/// Records to encode, served as cached vectors where available.
#[derive(Debug, Clone)]
pub struct EncodingDataset {
    ids: Vec<RecordId>,
    side: Side,
    store: Arc<StoreHandle>,
    cache: Option<Arc<EmbeddingCache>>,
}

impl EncodingDataset {
    /// Every id must exist in `store`; items are sorted by id.
    pub fn new(
        ids: impl IntoIterator<Item = RecordId>,
        side: Side,
        store: Arc<StoreHandle>,
        cache: Option<Arc<EmbeddingCache>>,
    ) -> Result<Self> {
        let ids: Vec<RecordId> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if let Some(missing) = ids.iter().find(|id| !store.contains(id.as_str())) {
            return Err(Error::MissingRecord {
                side,
                id: missing.clone(),
            });
        }
        Ok(EncodingDataset {
            ids,
            side,
            store,
            cache,
        })
    }

    /// All ids of `store`.
    pub fn whole_store(side: Side, store: Arc<StoreHandle>, cache: Option<Arc<EmbeddingCache>>) -> Result<Self> {
        let ids = store.ids().map(RecordId::new).collect::<Result<Vec<_>>>()?;
        Self::new(ids, side, store, cache)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[RecordId] {
        &self.ids
    }

    pub fn get(&self, i: usize) -> Result<EncodingItem> {
        let id = self.ids.get(i).ok_or(Error::OutOfRange {
            index: i,
            len: self.ids.len(),
        })?;
        if let Some(v) = self.cache.as_ref().and_then(|c| c.get(id.as_str())) {
            return Ok(EncodingItem {
                id: id.clone(),
                payload: EncodingPayload::Vector(v),
            });
        }
        Ok(EncodingItem {
            id: id.clone(),
            payload: EncodingPayload::Text(fetch(&self.store, self.side, id)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qrels::{MemoryGroups, QrelTriple};
    use crate::store::StoreWriter;

    fn store(dir: &Path, name: &str, ids: &[&str]) -> Arc<StoreHandle> {
        let mut w = StoreWriter::in_memory();
        let mut scratch = Vec::new();
        for id in ids {
            let rec = TextRecord::new(RecordId::new(id).unwrap(), None, format!("text of {id}")).unwrap();
            w.push_text(&rec, &mut scratch).unwrap();
        }
        Arc::new(w.finish(&dir.join(name)).unwrap())
    }

    fn groups(spec: &[(&str, &str, i32)]) -> Arc<dyn GroupSource> {
        Arc::new(MemoryGroups::from_triples(spec.iter().map(|(q, d, s)| QrelTriple {
            query_id: RecordId::new(q).unwrap(),
            doc_id: RecordId::new(d).unwrap(),
            score: *s,
        })))
    }

    fn labels(ds: &MultiLevelDataset, i: usize) -> Vec<(String, i32)> {
        ds.labels(i)
            .unwrap()
            .into_iter()
            .map(|d| (d.doc_id.to_string(), d.label))
            .collect()
    }

    #[test]
    fn earliest_collection_wins() {
        let dir = tempfile::tempdir().unwrap();
        let q = store(dir.path(), "q", &["q1", "q2"]);
        let c = store(dir.path(), "c", &["d1", "n1", "d2"]);
        let col = |g| Collection { groups: g, queries: q.clone(), corpus: c.clone() };
        let ds = MultiLevelDataset::new(vec![
            col(groups(&[("q1", "d1", 3)])),
            col(groups(&[("q1", "d1", 1), ("q1", "n1", 1), ("q2", "d2", 0)])),
        ])
        .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(labels(&ds, 0), [("d1".into(), 3), ("n1".into(), 1)]);
        assert_eq!(ds.query_id(1).as_str(), "q2");
        assert!(matches!(ds.get_example(2), Err(Error::OutOfRange { index: 2, len: 2 })));
    }

    #[test]
    fn example_decodes_only_its_records() {
        let dir = tempfile::tempdir().unwrap();
        let q = store(dir.path(), "q", &["q1", "q2"]);
        let c = store(dir.path(), "c", &["a", "b", "c", "d"]);
        let ds = MultiLevelDataset::new(vec![Collection {
            groups: groups(&[("q1", "a", 1), ("q1", "b", 2), ("q2", "c", 0)]),
            queries: q.clone(),
            corpus: c.clone(),
        }])
        .unwrap();
        let ex = ds.get_example(0).unwrap();
        assert_eq!((q.decoded(), c.decoded()), (1, 2));
        assert_eq!(ex.docs.iter().map(|(d, l)| (d.id.as_str(), *l)).collect::<Vec<_>>(), [("b", 2), ("a", 1)]);
        assert_eq!(ds.get_example(0).unwrap(), ex);
    }

    #[test]
    fn missing_doc_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ds = MultiLevelDataset::new(vec![Collection {
            groups: groups(&[("q1", "d9", 1)]),
            queries: store(dir.path(), "q", &["q1"]),
            corpus: store(dir.path(), "c", &["d1"]),
        }])
        .unwrap();
        assert!(matches!(
            ds.get_example(0),
            Err(Error::MissingRecord { side: Side::Corpus, id }) if id.as_str() == "d9"
        ));
    }

    #[test]
    fn binary_selection() {
        let dir = tempfile::tempdir().unwrap();
        let q = store(dir.path(), "q", &["q1", "q2", "q3"]);
        let c = store(dir.path(), "c", &["d1", "d2", "n1", "n2", "n3"]);
        let ml = MultiLevelDataset::new(vec![Collection {
            groups: groups(&[
                ("q1", "d1", 3),
                ("q1", "n1", 0),
                ("q1", "n2", 0),
                ("q2", "d1", 1),
                ("q2", "d2", 2),
                ("q3", "n1", 0),
                ("q3", "d2", 1),
            ]),
            queries: q,
            corpus: c,
        }])
        .unwrap();
        let mut spec = DatasetSpec::new(vec![CollectionConfig::new("x")], 42);
        spec.negatives_per_query = 2;
        let bin = BinaryDataset::new(ml.clone(), &spec).unwrap();
        assert_eq!(bin.len(), 2);
        assert_eq!(bin.dropped(), 1);
        let ex = bin.get(0).unwrap();
        assert_eq!(ex.positive.id.as_str(), "d1");
        let negs: BTreeSet<_> = ex.negatives.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(negs, BTreeSet::from(["n1", "n2"]));
        assert!(!ex.short);
        let ex = bin.get(1).unwrap();
        assert_eq!(ex.positive.id.as_str(), "d2");
        assert_eq!(ex.negatives.len(), 1);
        assert!(ex.short);

        let again = BinaryDataset::new(ml, &spec).unwrap();
        assert_eq!(again.get(0).unwrap(), bin.get(0).unwrap());
    }

    #[test]
    fn encoding_dataset_prefers_cache() {
        let dir = tempfile::tempdir().unwrap();
        let c = store(dir.path(), "c", &["a", "b", "c", "d"]);
        let ids = |names: &[&str]| names.iter().map(|n| RecordId::new(n).unwrap()).collect::<Vec<_>>();
        let cache = Arc::new(
            crate::embedding::cache_vectors(dir.path().join("e.qkec"), 2, &ids(&["a", "c"]), &[1.0, 0.0, 0.0, 1.0])
                .unwrap(),
        );
        let ds = EncodingDataset::new(ids(&["d", "a", "c", "b"]), Side::Corpus, c.clone(), Some(cache)).unwrap();
        let kinds: Vec<_> = (0..ds.len())
            .map(|i| match ds.get(i).unwrap().payload {
                EncodingPayload::Vector(_) => 'v',
                EncodingPayload::Text(_) => 't',
            })
            .collect();
        assert_eq!(kinds, ['v', 't', 'v', 't']);
        assert_eq!(c.decoded(), 2);
        assert!(matches!(
            EncodingDataset::new(ids(&["zz"]), Side::Corpus, c, None),
            Err(Error::MissingRecord { .. })
        ));
    }
}

use std::collections::HashMap;
use std::path::Path;

use serde_json::json;

use crate::cache::ArtifactCache;
use crate::error::{Error, Result};
use crate::fingerprint::{canonical_json, Fingerprint, Fingerprinter};
use crate::record::RecordId;
use crate::store::{CacheOutcome, StoreHandle, StoreWriter};

use super::{load_qrels, GroupSource, QrelGroup, QrelTriple, Registry};

const GROUPED_VERSION: u32 = 1;

/// Groups triples by query id. Duplicate (query, doc) pairs keep the
/// maximum score. Output is sorted by query id, entries by doc id.
pub fn group_triples(triples: impl Iterator<Item = Result<QrelTriple>>) -> Result<Vec<QrelGroup>> {
    let mut by_query: HashMap<RecordId, Vec<(RecordId, i32)>> = HashMap::new();
    for t in triples {
        let t = t?;
        by_query.entry(t.query_id).or_default().push((t.doc_id, t.score));
    }
    let mut groups: Vec<QrelGroup> = by_query
        .into_iter()
        .map(|(query_id, mut entries)| {
            entries.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            entries.dedup_by(|later, earlier| later.0 == earlier.0);
            QrelGroup { query_id, entries }
        })
        .collect();
    groups.sort_unstable_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(groups)
}

pub(crate) fn encode_entries(entries: &[(RecordId, i32)], out: &mut Vec<u8>) {
    out.clear();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (doc, score) in entries {
        out.extend_from_slice(&(doc.as_str().len() as u16).to_le_bytes());
        out.extend_from_slice(doc.as_str().as_bytes());
        out.extend_from_slice(&score.to_le_bytes());
    }
}

fn decode_entries(bytes: &[u8]) -> Option<Vec<(RecordId, i32)>> {
    let count = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
    let mut entries = Vec::with_capacity(count.min(bytes.len()));
    let mut at = 4;
    for _ in 0..count {
        let id_len = u16::from_le_bytes(bytes.get(at..at + 2)?.try_into().ok()?) as usize;
        let id = std::str::from_utf8(bytes.get(at + 2..at + 2 + id_len)?).ok()?;
        let score_at = at + 2 + id_len;
        let score = i32::from_le_bytes(bytes.get(score_at..score_at + 4)?.try_into().ok()?);
        entries.push((RecordId::new(id).ok()?, score));
        at = score_at + 4;
    }
    (at == bytes.len()).then_some(entries)
}

/// Query-grouped qrels backed by a memory-mapped store artifact.
#[derive(Debug)]
pub struct GroupedQrels {
    store: StoreHandle,
    fingerprint: Fingerprint,
    outcome: CacheOutcome,
    triples_grouped: u64,
}

impl GroupedQrels {
    /// Loads and groups a qrel file, reusing the cached artifact when the
    /// file content, format and seed are unchanged.
    pub fn load(
        path: &Path,
        format: &str,
        registry: &Registry,
        cache: &ArtifactCache,
        seed: u64,
    ) -> Result<Self> {
        let fp = grouped_fingerprint(path, format, seed)?;
        if let Some(hit) = Self::cached(cache, &fp)? {
            return Ok(hit);
        }
        let triples = load_qrels(path, format, registry)?;
        group_by_query(triples, cache, fp)
    }

    fn cached(cache: &ArtifactCache, fp: &Fingerprint) -> Result<Option<Self>> {
        match cache.lookup(fp) {
            Some(path) => Ok(Some(GroupedQrels {
                store: StoreHandle::open(path)?,
                fingerprint: *fp,
                outcome: CacheOutcome::Hit,
                triples_grouped: 0,
            })),
            None => Ok(None),
        }
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn outcome(&self) -> CacheOutcome {
        self.outcome
    }

    /// Triples consumed while building; zero on a cache hit.
    pub fn triples_grouped(&self) -> u64 {
        self.triples_grouped
    }

    pub fn store(&self) -> &StoreHandle {
        &self.store
    }
}

fn grouped_fingerprint(path: &Path, format: &str, seed: u64) -> Result<Fingerprint> {
    let mut fp = Fingerprinter::new();
    fp.file(path)?;
    Ok(fp.finish(&canonical_json(&json!({
        "artifact": "grouped-qrels",
        "format": format,
        "seed": seed,
        "version": GROUPED_VERSION,
    }))))
}

/// Groups `triples` into a cached artifact keyed by `fp`. On a cache hit
/// the triples are not consumed.
pub fn group_by_query(
    triples: impl Iterator<Item = Result<QrelTriple>>,
    cache: &ArtifactCache,
    fp: Fingerprint,
) -> Result<GroupedQrels> {
    if let Some(hit) = GroupedQrels::cached(cache, &fp)? {
        return Ok(hit);
    }
    let mut consumed = 0u64;
    let groups = group_triples(triples.inspect(|_| consumed += 1))?;
    let mut writer = StoreWriter::in_memory();
    let mut buf = Vec::new();
    for g in &groups {
        encode_entries(&g.entries, &mut buf);
        writer.push(g.query_id.clone(), &buf)?;
    }
    drop(groups);
    let store = writer.finish(&cache.artifact_path(&fp))?;
    cache.publish_marker(&fp)?;
    tracing::debug!(fingerprint = %fp, groups = store.len(), triples = consumed, "grouped qrels");
    Ok(GroupedQrels {
        store,
        fingerprint: fp,
        outcome: CacheOutcome::Miss,
        triples_grouped: consumed,
    })
}

impl GroupSource for GroupedQrels {
    fn len(&self) -> usize {
        self.store.len()
    }

    fn query_id(&self, i: usize) -> &str {
        self.store.id_at(i)
    }

    fn group(&self, i: usize) -> Result<QrelGroup> {
        if i >= self.store.len() {
            return Err(Error::OutOfRange {
                index: i,
                len: self.store.len(),
            });
        }
        let entries = decode_entries(self.store.bytes_at(i))
            .ok_or_else(|| Error::corrupt(self.store.path(), "malformed grouped qrel payload"))?;
        Ok(QrelGroup {
            query_id: RecordId::new(self.store.id_at(i))?,
            entries,
        })
    }

    fn position(&self, query_id: &str) -> Option<usize> {
        self.store.position(query_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qrels::MemoryGroups;
    use std::collections::BTreeMap;

    fn t(q: &str, d: &str, s: i32) -> QrelTriple {
        QrelTriple {
            query_id: RecordId::new(q).unwrap(),
            doc_id: RecordId::new(d).unwrap(),
            score: s,
        }
    }

    fn flat(groups: &[QrelGroup]) -> Vec<(String, Vec<(String, i32)>)> {
        groups
            .iter()
            .map(|g| {
                (
                    g.query_id.to_string(),
                    g.entries.iter().map(|(d, s)| (d.to_string(), *s)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn grouping_definition() {
        let groups = group_triples(
            [t("q1", "d1", 2), t("q1", "d3", 1), t("q2", "d2", 2)].into_iter().map(Ok),
        )
        .unwrap();
        assert_eq!(
            flat(&groups),
            [
                ("q1".into(), vec![("d1".into(), 2), ("d3".into(), 1)]),
                ("q2".into(), vec![("d2".into(), 2)])
            ]
        );
    }

    #[test]
    fn duplicate_keeps_max() {
        for order in [[1, 3], [3, 1]] {
            let groups =
                group_triples(order.iter().map(|&s| Ok(t("q1", "d1", s)))).unwrap();
            assert_eq!(flat(&groups), [("q1".into(), vec![("d1".into(), 3)])]);
        }
    }

    #[test]
    fn artifact_cached_on_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let qrels = dir.path().join("q.tsv");
        std::fs::write(&qrels, "q1\td1\t2\nq1\td3\t1\nq2\td2\t2\n").unwrap();
        let cache = ArtifactCache::open(dir.path().join("cache")).unwrap();
        let reg = Registry::new();

        let first = GroupedQrels::load(&qrels, "tsv", &reg, &cache, 42).unwrap();
        assert_eq!(first.outcome(), CacheOutcome::Miss);
        assert_eq!(first.triples_grouped(), 3);
        let second = GroupedQrels::load(&qrels, "tsv", &reg, &cache, 42).unwrap();
        assert_eq!(second.outcome(), CacheOutcome::Hit);
        assert_eq!(second.triples_grouped(), 0);
        assert_eq!(
            MemoryGroups::from_source(&first).unwrap(),
            MemoryGroups::from_source(&second).unwrap()
        );
        assert_eq!(second.find("q2").unwrap().unwrap().entries.len(), 1);
        assert!(second.find("q3").unwrap().is_none());
    }

    #[test]
    fn matches_naive_oracle_on_random_triples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let dir = tempfile::tempdir().unwrap();
        let cache = ArtifactCache::open(dir.path()).unwrap();
        for trial in 0..20u128 {
            let n = rng.gen_range(0..10_000);
            let triples: Vec<QrelTriple> = (0..n)
                .map(|_| {
                    t(
                        &format!("q{}", rng.gen_range(0..200)),
                        &format!("d{}", rng.gen_range(0..300)),
                        rng.gen_range(-2..4),
                    )
                })
                .collect();
            let mut oracle: BTreeMap<String, BTreeMap<String, i32>> = BTreeMap::new();
            for tr in &triples {
                let slot = oracle
                    .entry(tr.query_id.to_string())
                    .or_default()
                    .entry(tr.doc_id.to_string())
                    .or_insert(i32::MIN);
                *slot = (*slot).max(tr.score);
            }
            let expected: Vec<(String, Vec<(String, i32)>)> = oracle
                .into_iter()
                .map(|(q, docs)| (q, docs.into_iter().collect()))
                .collect();
            let grouped =
                group_by_query(triples.into_iter().map(Ok), &cache, Fingerprint(trial)).unwrap();
            let got = MemoryGroups::from_source(&grouped).unwrap();
            assert_eq!(flat(got.groups()), expected);
        }
    }
}

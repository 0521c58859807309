//! Qrel collections: loading, grouping by query, declarative transforms,
//! and lazy materialization against record stores.

mod config;
mod group;
mod loader;

pub use config::{apply_config, CollectionConfig, CollectionView, ScoreTransform};
pub use group::{group_by_query, group_triples, GroupedQrels};
pub use loader::{
    load_qrels, read_query_subset, FilterFn, LoaderFn, MappingFn, Registry, TrecQrels, TripleIter,
    TsvQrels,
};

use crate::error::{Error, Result, Side};
use crate::record::{RecordId, TextRecord};
use crate::store::StoreHandle;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QrelTriple {
    pub query_id: RecordId,
    pub doc_id: RecordId,
    pub score: i32,
}

/// One query with its judged documents, sorted by doc id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QrelGroup {
    pub query_id: RecordId,
    pub entries: Vec<(RecordId, i32)>,
}

impl QrelGroup {
    pub fn score_of(&self, doc_id: &str) -> Option<i32> {
        self.entries
            .binary_search_by(|(d, _)| d.as_str().cmp(doc_id))
            .ok()
            .map(|i| self.entries[i].1)
    }
}

/// Random-access, query-id-ordered source of qrel groups.
pub trait GroupSource: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Query id at position `i`; ids ascend with `i`.
    fn query_id(&self, i: usize) -> &str;

    fn group(&self, i: usize) -> Result<QrelGroup>;

    fn position(&self, query_id: &str) -> Option<usize>;

    fn find(&self, query_id: &str) -> Result<Option<QrelGroup>> {
        self.position(query_id).map(|i| self.group(i)).transpose()
    }
}

/// Groups held in memory, sorted by query id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryGroups {
    groups: Vec<QrelGroup>,
}

impl MemoryGroups {
    /// Groups the triples (max score wins on duplicate pairs).
    pub fn from_triples(triples: impl IntoIterator<Item = QrelTriple>) -> Self {
        let groups = group_triples(triples.into_iter().map(Ok)).expect("infallible source");
        MemoryGroups { groups }
    }

    pub fn from_source(source: &dyn GroupSource) -> Result<Self> {
        let groups = (0..source.len()).map(|i| source.group(i)).collect::<Result<_>>()?;
        Ok(MemoryGroups { groups })
    }

    pub fn groups(&self) -> &[QrelGroup] {
        &self.groups
    }
}

impl GroupSource for MemoryGroups {
    fn len(&self) -> usize {
        self.groups.len()
    }

    fn query_id(&self, i: usize) -> &str {
        self.groups[i].query_id.as_str()
    }

    fn group(&self, i: usize) -> Result<QrelGroup> {
        self.groups.get(i).cloned().ok_or(Error::OutOfRange {
            index: i,
            len: self.groups.len(),
        })
    }

    fn position(&self, query_id: &str) -> Option<usize> {
        self.groups
            .binary_search_by(|g| g.query_id.as_str().cmp(query_id))
            .ok()
    }
}

/// A group with its records resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaterializedGroup {
    pub query: TextRecord,
    pub entries: Vec<(TextRecord, i32)>,
}

pub(crate) fn fetch(store: &StoreHandle, side: Side, id: &RecordId) -> Result<TextRecord> {
    store.get_record(id.as_str()).map_err(|e| match e {
        Error::NotFound(id) => Error::MissingRecord { side, id },
        other => other,
    })
}

/// Resolves exactly one query record and one corpus record per entry.
pub fn materialize_group(
    group: &QrelGroup,
    query_store: &StoreHandle,
    corpus_store: &StoreHandle,
) -> Result<MaterializedGroup> {
    let query = fetch(query_store, Side::Query, &group.query_id)?;
    let entries = group
        .entries
        .iter()
        .map(|(doc, score)| Ok((fetch(corpus_store, Side::Corpus, doc)?, *score)))
        .collect::<Result<_>>()?;
    Ok(MaterializedGroup { query, entries })
}

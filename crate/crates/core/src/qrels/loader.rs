//! Qrel file loaders and the callback registry.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::record::RecordId;

use super::QrelTriple;

pub type TripleIter = Box<dyn Iterator<Item = Result<QrelTriple>> + Send>;
pub type LoaderFn = Arc<dyn Fn(&Path) -> Result<TripleIter> + Send + Sync>;
/// `(query_id, doc_id, score) -> keep`
pub type FilterFn = Arc<dyn Fn(&str, &str, i32) -> bool + Send + Sync>;
pub type MappingFn = Arc<dyn Fn(i32) -> i32 + Send + Sync>;

/// Named loaders, entry filters, and score mappings.
///
/// Configs refer to callbacks by name so they stay serializable and
/// fingerprintable. Build the registry at startup and share it immutably.
#[derive(Clone)]
pub struct Registry {
    loaders: BTreeMap<String, LoaderFn>,
    filters: BTreeMap<String, FilterFn>,
    mappings: BTreeMap<String, MappingFn>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("loaders", &self.loaders.keys().collect::<Vec<_>>())
            .field("filters", &self.filters.keys().collect::<Vec<_>>())
            .field("mappings", &self.mappings.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

fn names<V>(map: &BTreeMap<String, V>) -> String {
    map.keys().cloned().collect::<Vec<_>>().join(", ")
}

impl Registry {
    /// Registry with the built-in `tsv`/`trec` loaders, the `positive` and
    /// `non_positive` filters, and the `identity`/`binarize` mappings.
    pub fn new() -> Self {
        let mut reg = Registry::empty();
        reg.register_loader("tsv", |p| Ok(Box::new(TsvQrels::open(p)?) as TripleIter))
            .unwrap();
        reg.register_loader("trec", |p| Ok(Box::new(TrecQrels::open(p)?) as TripleIter))
            .unwrap();
        reg.register_filter("positive", |_, _, s| s > 0).unwrap();
        reg.register_filter("non_positive", |_, _, s| s <= 0).unwrap();
        reg.register_mapping("identity", |s| s).unwrap();
        reg.register_mapping("binarize", |s| i32::from(s >= 1)).unwrap();
        reg
    }

    pub fn empty() -> Self {
        Registry {
            loaders: BTreeMap::new(),
            filters: BTreeMap::new(),
            mappings: BTreeMap::new(),
        }
    }

    pub fn register_loader<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: Fn(&Path) -> Result<TripleIter> + Send + Sync + 'static,
    {
        insert_unique(&mut self.loaders, "loader", name, Arc::new(f))
    }

    pub fn register_filter<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: Fn(&str, &str, i32) -> bool + Send + Sync + 'static,
    {
        insert_unique(&mut self.filters, "filter", name, Arc::new(f))
    }

    pub fn register_mapping<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: Fn(i32) -> i32 + Send + Sync + 'static,
    {
        insert_unique(&mut self.mappings, "mapping", name, Arc::new(f))
    }

    pub fn loader(&self, name: &str) -> Result<&LoaderFn> {
        self.loaders.get(name).ok_or_else(|| Error::UnknownFormat {
            name: name.to_owned(),
            known: names(&self.loaders),
        })
    }

    pub fn filter(&self, name: &str) -> Result<&FilterFn> {
        self.filters.get(name).ok_or_else(|| Error::UnknownCallback {
            kind: "filter",
            name: name.to_owned(),
            known: names(&self.filters),
        })
    }

    pub fn mapping(&self, name: &str) -> Result<&MappingFn> {
        self.mappings.get(name).ok_or_else(|| Error::UnknownCallback {
            kind: "mapping",
            name: name.to_owned(),
            known: names(&self.mappings),
        })
    }

    pub fn formats(&self) -> impl Iterator<Item = &str> {
        self.loaders.keys().map(String::as_str)
    }
}

fn insert_unique<V>(map: &mut BTreeMap<String, V>, kind: &str, name: &str, value: V) -> Result<()> {
    if map.contains_key(name) {
        return Err(Error::InvalidConfig(format!("{kind} {name:?} is already registered")));
    }
    map.insert(name.to_owned(), value);
    Ok(())
}

/// Streams qrel triples from `path` using the named loader.
pub fn load_qrels(path: &Path, format: &str, registry: &Registry) -> Result<TripleIter> {
    registry.loader(format)?(path)
}

struct LineReader {
    path: PathBuf,
    reader: BufReader<File>,
    line: String,
    line_no: u64,
}

impl LineReader {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
        Ok(LineReader {
            path: path.to_path_buf(),
            reader: BufReader::with_capacity(1 << 16, file),
            line: String::new(),
            line_no: 0,
        })
    }

    /// Advances to the next non-blank line.
    fn advance(&mut self) -> Option<Result<()>> {
        loop {
            self.line.clear();
            match self.reader.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(Error::io_at(&self.path, e))),
            }
            self.line_no += 1;
            if !self.line.trim().is_empty() {
                return Some(Ok(()));
            }
        }
    }

    /// Current line with its terminator stripped.
    fn current(&self) -> &str {
        self.line.trim_end_matches(['\n', '\r'])
    }
}

fn parse_id(path: &Path, line_no: u64, field: &str) -> Result<RecordId> {
    RecordId::new(field).map_err(|e| Error::parse(path, line_no, e.to_string()))
}

fn parse_score(path: &Path, line_no: u64, field: &str) -> Result<i32> {
    field
        .trim()
        .parse::<i32>()
        .map_err(|_| Error::parse(path, line_no, format!("score {field:?} is not a 32-bit integer")))
}

/// `qid<TAB>docid<TAB>score`, with an optional header line whose third
/// field is non-numeric.
pub struct TsvQrels {
    lines: LineReader,
    first: bool,
}

impl TsvQrels {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(TsvQrels {
            lines: LineReader::open(path)?,
            first: true,
        })
    }
}

impl Iterator for TsvQrels {
    type Item = Result<QrelTriple>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let first = std::mem::replace(&mut self.first, false);
            let line = match self.lines.advance()? {
                Ok(()) => self.lines.current(),
                Err(e) => return Some(Err(e)),
            };
            let (path, line_no) = (&self.lines.path, self.lines.line_no);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Some(Err(Error::parse(
                    path,
                    line_no,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                )));
            }
            if first && fields[2].trim().parse::<i64>().is_err() {
                continue;
            }
            return Some((|| {
                Ok(QrelTriple {
                    query_id: parse_id(path, line_no, fields[0])?,
                    doc_id: parse_id(path, line_no, fields[1])?,
                    score: parse_score(path, line_no, fields[2])?,
                })
            })());
        }
    }
}

/// TREC qrels: `qid 0 docid rel`, whitespace-separated.
pub struct TrecQrels {
    lines: LineReader,
}

impl TrecQrels {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(TrecQrels {
            lines: LineReader::open(path)?,
        })
    }
}

impl Iterator for TrecQrels {
    type Item = Result<QrelTriple>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.lines.advance()? {
            Ok(()) => self.lines.current(),
            Err(e) => return Some(Err(e)),
        };
        let (path, line_no) = (&self.lines.path, self.lines.line_no);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Some(Err(Error::parse(
                path,
                line_no,
                format!("expected 4 whitespace-separated fields, found {}", fields.len()),
            )));
        }
        Some((|| {
            Ok(QrelTriple {
                query_id: parse_id(path, line_no, fields[0])?,
                doc_id: parse_id(path, line_no, fields[2])?,
                score: parse_score(path, line_no, fields[3])?,
            })
        })())
    }
}

fn collect_query_ids(iter: impl Iterator<Item = Result<QrelTriple>>) -> Result<BTreeSet<RecordId>> {
    let mut set = BTreeSet::new();
    for t in iter {
        set.insert(t?.query_id);
    }
    Ok(set)
}

/// Reads a query subset file: a qrel file (TSV or TREC, first column) or
/// plain text with one id per non-empty line.
pub fn read_query_subset(path: &Path) -> Result<BTreeSet<RecordId>> {
    match collect_query_ids(TsvQrels::open(path)?) {
        Ok(set) => return Ok(set),
        Err(e) if e.is_io() => return Err(e),
        Err(_) => {}
    }
    match collect_query_ids(TrecQrels::open(path)?) {
        Ok(set) => return Ok(set),
        Err(e) if e.is_io() => return Err(e),
        Err(_) => {}
    }
    let mut lines = LineReader::open(path)?;
    let mut set = BTreeSet::new();
    while let Some(step) = lines.advance() {
        step?;
        set.insert(parse_id(path, lines.line_no, lines.current().trim())?);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn triples(iter: TripleIter) -> Vec<(String, String, i32)> {
        iter.map(|t| {
            let t = t.unwrap();
            (t.query_id.to_string(), t.doc_id.to_string(), t.score)
        })
        .collect()
    }

    #[test]
    fn tsv_three_triples() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "q.tsv", "q1\td1\t2\nq1\td3\t1\nq2\td2\t2");
        let reg = Registry::new();
        let got = triples(load_qrels(&p, "tsv", &reg).unwrap());
        assert_eq!(
            got,
            [
                ("q1".into(), "d1".into(), 2),
                ("q1".into(), "d3".into(), 1),
                ("q2".into(), "d2".into(), 2)
            ]
        );
    }

    #[test]
    fn tsv_header_skipped_only_first_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "q.tsv", "query-id\tcorpus-id\tscore\r\nq1\td1\t1\r\n\n");
        let got = triples(load_qrels(&p, "tsv", &Registry::new()).unwrap());
        assert_eq!(got, [("q1".into(), "d1".into(), 1)]);

        let p = write(dir.path(), "bad.tsv", "q1\td1\t1\nq2\td2\tx\n");
        let err = load_qrels(&p, "tsv", &Registry::new())
            .unwrap()
            .collect::<Result<Vec<_>>>()
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn trec_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "q.trec", "q1 0 d1 1\n");
        let got = triples(load_qrels(&p, "trec", &Registry::new()).unwrap());
        assert_eq!(got, [("q1".into(), "d1".into(), 1)]);
        let p = write(dir.path(), "bad.trec", "q1 0 d1\n");
        assert!(load_qrels(&p, "trec", &Registry::new()).unwrap().next().unwrap().is_err());
    }

    #[test]
    fn unknown_format_lists_names() {
        let err = load_qrels(Path::new("x"), "xml", &Registry::new()).err().unwrap();
        match err {
            Error::UnknownFormat { name, known } => {
                assert_eq!(name, "xml");
                assert_eq!(known, "trec, tsv");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn custom_loader_and_duplicate_names() {
        let mut reg = Registry::new();
        reg.register_loader("fixed", |_| {
            Ok(Box::new(std::iter::once(Ok(QrelTriple {
                query_id: RecordId::new("q").unwrap(),
                doc_id: RecordId::new("d").unwrap(),
                score: 5,
            }))) as TripleIter)
        })
        .unwrap();
        assert_eq!(triples(load_qrels(Path::new("-"), "fixed", &reg).unwrap()).len(), 1);
        assert!(reg.register_loader("tsv", |p| Ok(Box::new(TsvQrels::open(p)?) as TripleIter)).is_err());
    }

    #[test]
    fn subset_file_variants() {
        let dir = tempfile::tempdir().unwrap();
        let ids = |set: BTreeSet<RecordId>| set.into_iter().map(|r| r.to_string()).collect::<Vec<_>>();

        let p = write(dir.path(), "a.tsv", "q1\td1\t1\nq1\td2\t0\nq2\td1\t1\n");
        assert_eq!(ids(read_query_subset(&p).unwrap()), ["q1", "q2"]);

        let p = write(dir.path(), "b.txt", "qa\nqb\n");
        assert_eq!(ids(read_query_subset(&p).unwrap()), ["qa", "qb"]);

        let p = write(dir.path(), "c.trec", "q9 0 d1 1\nq8 0 d1 0\n");
        assert_eq!(ids(read_query_subset(&p).unwrap()), ["q8", "q9"]);

        let p = write(dir.path(), "empty.txt", "");
        assert!(read_query_subset(&p).unwrap().is_empty());

        assert!(read_query_subset(&dir.path().join("missing")).unwrap_err().is_io());
    }
}

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use crate::atomic::atomic_write_with;
use crate::error::{Error, Result};
use crate::record::RecordId;
use crate::topk::{ScoredDoc, TopKState};

/// Ranked documents per query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunResult {
    pub lists: BTreeMap<RecordId, Vec<ScoredDoc>>,
}

impl RunResult {
    pub fn from_state(state: &TopKState) -> Self {
        let lists = state
            .query_ids()
            .iter()
            .cloned()
            .zip(state.finalize())
            .collect();
        RunResult { lists }
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn get(&self, query_id: &str) -> Option<&[ScoredDoc]> {
        self.lists.get(query_id).map(Vec::as_slice)
    }
}

/// `qid Q0 docid rank score tag` lines, queries in id order, ranks from 1.
pub fn write_trec_run_to(run: &RunResult, tag: &str, out: &mut dyn Write) -> io::Result<()> {
    let mut w = io::BufWriter::new(out);
    for (qid, docs) in &run.lists {
        for (rank, d) in docs.iter().enumerate() {
            writeln!(w, "{qid} Q0 {} {} {:.6} {tag}", d.doc_id, rank + 1, d.score)?;
        }
    }
    w.flush()
}

pub fn write_trec_run(run: &RunResult, path: impl AsRef<Path>, tag: &str) -> Result<()> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::InvalidConfig(format!("run tag {tag:?} must be one non-empty word")));
    }
    atomic_write_with(path, |w| write_trec_run_to(run, tag, w))
}

/// Reads a TREC run; each query's list is ordered by the rank column.
pub fn read_trec_run(path: impl AsRef<Path>) -> Result<RunResult> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut ranked: BTreeMap<RecordId, Vec<(u64, ScoredDoc)>> = BTreeMap::new();
    let mut seen: HashSet<(RecordId, RecordId)> = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n as u64 + 1;
        let line = line.map_err(|e| Error::io_at(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 6 whitespace-separated fields, found {}", fields.len()),
            ));
        }
        let id = |s: &str| RecordId::new(s).map_err(|e| Error::parse(path, line_no, e.to_string()));
        let qid = id(fields[0])?;
        let doc_id = id(fields[2])?;
        let rank: u64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad rank {:?}", fields[3])))?;
        let score: f32 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f32| !s.is_nan())
            .ok_or_else(|| Error::parse(path, line_no, format!("bad score {:?}", fields[4])))?;
        if !seen.insert((qid.clone(), doc_id.clone())) {
            return Err(Error::parse(path, line_no, format!("document {doc_id} repeated for query {qid}")));
        }
        ranked.entry(qid).or_default().push((rank, ScoredDoc { doc_id, score }));
    }
    let lists = ranked
        .into_iter()
        .map(|(q, mut docs)| {
            docs.sort_by_key(|(rank, _)| *rank);
            (q, docs.into_iter().map(|(_, d)| d).collect())
        })
        .collect();
    Ok(RunResult { lists })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, score: f32) -> ScoredDoc {
        ScoredDoc { doc_id: RecordId::new(id).unwrap(), score }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.trec");
        let mut run = RunResult::default();
        run.lists.insert(RecordId::new("q2").unwrap(), vec![doc("a", 0.5), doc("b", -0.25)]);
        run.lists.insert(RecordId::new("q1").unwrap(), vec![doc("c", 1.0)]);
        write_trec_run(&run, &path, "qrelkit").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "q1 Q0 c 1 1.000000 qrelkit\nq2 Q0 a 1 0.500000 qrelkit\nq2 Q0 b 2 -0.250000 qrelkit\n"
        );
        assert_eq!(read_trec_run(&path).unwrap(), run);

        write_trec_run(&RunResult::default(), &path, "t").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"");
        assert!(read_trec_run(&path).unwrap().is_empty());
    }

    #[test]
    fn rank_column_orders_lists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.trec");
        std::fs::write(&path, "q1 Q0 b 2 0.5 t\nq1 Q0 a 1 0.5 t\n").unwrap();
        let run = read_trec_run(&path).unwrap();
        let ids: Vec<_> = run.get("q1").unwrap().iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.trec");
        for body in ["q1 Q0 a 1 0.5\n", "q1 Q0 a x 0.5 t\n", "q1 Q0 a 1 nan t\n", "q1 Q0 a 1 1 t\nq1 Q0 a 2 1 t\n"] {
            std::fs::write(&path, body).unwrap();
            assert!(matches!(read_trec_run(&path), Err(Error::Parse { .. })), "{body:?}");
        }
        assert!(write_trec_run(&RunResult::default(), &path, "two words").is_err());
    }
}

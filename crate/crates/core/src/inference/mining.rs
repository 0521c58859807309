use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atomic::atomic_write_with;
use crate::error::{Error, Result};
use crate::qrels::{GroupSource, QrelTriple};
use crate::record::RecordId;

use super::RunResult;

fn default_threshold() -> i32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Ranked candidates examined per query.
    pub depth: usize,
    pub num_negatives: usize,
    #[serde(default)]
    pub negative_label: i32,
    #[serde(default = "default_threshold")]
    pub positive_threshold: i32,
}

impl MiningConfig {
    pub fn new(depth: usize, num_negatives: usize) -> Self {
        MiningConfig {
            depth,
            num_negatives,
            negative_label: 0,
            positive_threshold: default_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_negatives == 0 || self.num_negatives > self.depth {
            return Err(Error::InvalidConfig(format!(
                "num_negatives must be in 1..={}, got {}",
                self.depth, self.num_negatives
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MiningOutcome {
    pub triples: Vec<QrelTriple>,
    /// Queries that produced fewer than `num_negatives` negatives.
    pub short_queries: Vec<(RecordId, usize)>,
}

/// Walks each ranked list top-down to `depth`, skipping annotated
/// positives, and emits the first `num_negatives` survivors.
pub fn mine_hard_negatives(
    run: &RunResult,
    positives: &dyn GroupSource,
    cfg: &MiningConfig,
) -> Result<MiningOutcome> {
    cfg.validate()?;
    let mut out = MiningOutcome::default();
    for (qid, ranked) in &run.lists {
        let group = positives.find(qid.as_str())?;
        let is_positive = |doc: &str| {
            group
                .as_ref()
                .and_then(|g| g.score_of(doc))
                .is_some_and(|s| s >= cfg.positive_threshold)
        };
        let before = out.triples.len();
        out.triples.extend(
            ranked
                .iter()
                .take(cfg.depth)
                .filter(|d| !is_positive(d.doc_id.as_str()))
                .take(cfg.num_negatives)
                .map(|d| QrelTriple {
                    query_id: qid.clone(),
                    doc_id: d.doc_id.clone(),
                    score: cfg.negative_label,
                }),
        );
        let emitted = out.triples.len() - before;
        if emitted < cfg.num_negatives {
            out.short_queries.push((qid.clone(), emitted));
        }
    }
    Ok(out)
}

pub fn write_qrels_tsv_to(triples: &[QrelTriple], out: &mut dyn Write) -> io::Result<()> {
    let mut w = io::BufWriter::new(out);
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.query_id, t.doc_id, t.score)?;
    }
    w.flush()
}

/// Writes `qid<TAB>docid<TAB>score` lines atomically.
pub fn write_qrels_tsv(triples: &[QrelTriple], path: impl AsRef<Path>) -> Result<()> {
    atomic_write_with(path, |w| write_qrels_tsv_to(triples, w))
}

//! Graded IR metrics over runs and qrels.
//!
//! nDCG uses gain `2^rel - 1` and discount `log2(i + 1)` for rank `i`
//! (1-based); unjudged documents and negative labels contribute no gain.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::RunResult;
use crate::qrels::{GroupSource, QrelGroup};
use crate::record::RecordId;
use crate::topk::{rank_cmp, ScoredDoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Ndcg,
    Mrr,
    Recall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub k: usize,
    /// Minimum label counted as relevant by mrr and recall.
    pub relevance_threshold: i32,
}

impl MetricSpec {
    pub fn new(kind: MetricKind, k: usize) -> Self {
        MetricSpec {
            kind,
            k,
            relevance_threshold: 1,
        }
    }

    pub fn with_threshold(mut self, threshold: i32) -> Self {
        self.relevance_threshold = threshold;
        self
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            MetricKind::Ndcg => "ndcg",
            MetricKind::Mrr => "mrr",
            MetricKind::Recall => "recall",
        };
        write!(f, "{name}@{}", self.k)
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    /// Parses `ndcg@10`, `mrr@10`, `recall@100`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad metric {s:?}; expected ndcg@K, mrr@K or recall@K"));
        let (name, k) = s.trim().split_once('@').ok_or_else(bad)?;
        let kind = match name.to_ascii_lowercase().as_str() {
            "ndcg" => MetricKind::Ndcg,
            "mrr" => MetricKind::Mrr,
            "recall" => MetricKind::Recall,
            _ => return Err(bad()),
        };
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(Error::InvalidK);
        }
        Ok(MetricSpec::new(kind, k))
    }
}

/// Parses a comma-separated metric list.
pub fn parse_metrics(list: &str) -> Result<Vec<MetricSpec>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub aggregate: f64,
    pub evaluated: usize,
    pub skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_query: Option<BTreeMap<String, f64>>,
}

impl MetricReport {
    fn from_values(values: BTreeMap<String, f64>, skipped: usize) -> Self {
        let evaluated = values.len();
        let aggregate = if evaluated == 0 {
            0.0
        } else {
            values.values().sum::<f64>() / evaluated as f64
        };
        MetricReport {
            aggregate,
            evaluated,
            skipped,
            per_query: Some(values),
        }
    }

    pub fn per_query(&self) -> &BTreeMap<String, f64> {
        static EMPTY: BTreeMap<String, f64> = BTreeMap::new();
        self.per_query.as_ref().unwrap_or(&EMPTY)
    }

    pub fn without_per_query(mut self) -> Self {
        self.per_query = None;
        self
    }
}

fn gain(label: i32) -> f64 {
    2f64.powi(label.max(0)) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// nDCG@k of one ranked list; `None` when no label has positive gain.
pub fn ndcg_query(ranked: &[ScoredDoc], group: &QrelGroup, k: usize) -> Option<f64> {
    let mut ideal: Vec<i32> = group.entries.iter().map(|e| e.1).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &l)| gain(l) / discount(i + 1))
        .sum();
    if idcg <= 0.0 {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(group.score_of(d.doc_id.as_str()).unwrap_or(0)) / discount(i + 1))
        .sum();
    Some(dcg / idcg)
}

/// Reciprocal rank of the first relevant doc in the top k; `None` when the
/// query has no relevant docs.
pub fn mrr_query(ranked: &[ScoredDoc], group: &QrelGroup, k: usize, threshold: i32) -> Option<f64> {
    if !group.entries.iter().any(|e| e.1 >= threshold) {
        return None;
    }
    let hit = ranked
        .iter()
        .take(k)
        .position(|d| group.score_of(d.doc_id.as_str()).is_some_and(|s| s >= threshold));
    Some(hit.map_or(0.0, |i| 1.0 / (i + 1) as f64))
}

/// Fraction of relevant docs found in the top k; `None` without relevant docs.
pub fn recall_query(ranked: &[ScoredDoc], group: &QrelGroup, k: usize, threshold: i32) -> Option<f64> {
    let relevant = group.entries.iter().filter(|e| e.1 >= threshold).count();
    if relevant == 0 {
        return None;
    }
    let found = ranked
        .iter()
        .take(k)
        .filter(|d| group.score_of(d.doc_id.as_str()).is_some_and(|s| s >= threshold))
        .count();
    Some(found as f64 / relevant as f64)
}

fn metric_query(spec: &MetricSpec, ranked: &[ScoredDoc], group: &QrelGroup) -> Option<f64> {
    match spec.kind {
        MetricKind::Ndcg => ndcg_query(ranked, group, spec.k),
        MetricKind::Mrr => mrr_query(ranked, group, spec.k, spec.relevance_threshold),
        MetricKind::Recall => recall_query(ranked, group, spec.k, spec.relevance_threshold),
    }
}

/// Evaluates one metric over every query in `qrels`. Queries missing from
/// the run score 0; queries the metric cannot be defined for are skipped.
pub fn evaluate_metric(run: &RunResult, qrels: &dyn GroupSource, spec: &MetricSpec) -> Result<MetricReport> {
    let mut values = BTreeMap::new();
    let mut skipped = 0;
    for i in 0..qrels.len() {
        let group = qrels.group(i)?;
        let ranked = run.get(group.query_id.as_str()).unwrap_or(&[]);
        match metric_query(spec, ranked, &group) {
            Some(v) => {
                values.insert(group.query_id.to_string(), v);
            }
            None => skipped += 1,
        }
    }
    Ok(MetricReport::from_values(values, skipped))
}

pub fn ndcg_at_k(run: &RunResult, qrels: &dyn GroupSource, k: usize) -> Result<MetricReport> {
    evaluate_metric(run, qrels, &MetricSpec::new(MetricKind::Ndcg, k))
}

pub fn mrr_at_k(run: &RunResult, qrels: &dyn GroupSource, k: usize, threshold: i32) -> Result<MetricReport> {
    evaluate_metric(run, qrels, &MetricSpec::new(MetricKind::Mrr, k).with_threshold(threshold))
}

pub fn recall_at_k(run: &RunResult, qrels: &dyn GroupSource, k: usize, threshold: i32) -> Result<MetricReport> {
    evaluate_metric(run, qrels, &MetricSpec::new(MetricKind::Recall, k).with_threshold(threshold))
}

/// Reports keyed by the metric's display name (`ndcg@10`).
pub fn evaluate(run: &RunResult, qrels: &dyn GroupSource, specs: &[MetricSpec]) -> Result<BTreeMap<String, MetricReport>> {
    specs
        .iter()
        .map(|s| Ok((s.to_string(), evaluate_metric(run, qrels, s)?)))
        .collect()
}

/// Model scores for annotated docs of each dev query.
pub type RerankScores = BTreeMap<RecordId, Vec<(RecordId, f32)>>;

/// Ranks only the annotated docs of each scored query by (score desc,
/// doc id asc) and computes the metrics over those short lists. Every
/// scored doc must be judged for its query.
pub fn rerank_eval(
    scores: &RerankScores,
    dev_qrels: &dyn GroupSource,
    specs: &[MetricSpec],
) -> Result<BTreeMap<String, MetricReport>> {
    let mut groups = Vec::with_capacity(scores.len());
    for (qid, scored) in scores {
        let group = dev_qrels.find(qid.as_str())?;
        let mut ranked = Vec::with_capacity(scored.len());
        for (doc, score) in scored {
            if score.is_nan() {
                return Err(Error::NanScore { row: groups.len(), col: ranked.len() });
            }
            if group.as_ref().and_then(|g| g.score_of(doc.as_str())).is_none() {
                return Err(Error::Unjudged {
                    query: qid.clone(),
                    doc: doc.clone(),
                });
            }
            ranked.push(ScoredDoc {
                doc_id: doc.clone(),
                score: *score,
            });
        }
        ranked.sort_by(|a, b| rank_cmp(a.score, a.doc_id.as_str(), b.score, b.doc_id.as_str()));
        if let Some(g) = group {
            groups.push((g, ranked));
        }
    }
    let mut out = BTreeMap::new();
    for spec in specs {
        let mut values = BTreeMap::new();
        let mut skipped = 0;
        for (group, ranked) in &groups {
            match metric_query(spec, ranked, group) {
                Some(v) => {
                    values.insert(group.query_id.to_string(), v);
                }
                None => skipped += 1,
            }
        }
        out.insert(spec.to_string(), MetricReport::from_values(values, skipped));
    }
    Ok(out)
}

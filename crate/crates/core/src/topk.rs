//! Batched per-query top-k tracking.
//!
//! Ordering everywhere is (score desc, doc id asc) with scores compared by
//! `f32::total_cmp`. NaN scores reject the whole batch.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::record::RecordId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredDoc {
    pub doc_id: RecordId,
    pub score: f32,
}

/// `Less` means `a` ranks before `b`.
#[inline]
pub fn rank_cmp(a_score: f32, a_id: &str, b_score: f32, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

fn doc_cmp(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    rank_cmp(a.score, a.doc_id.as_str(), b.score, b.doc_id.as_str())
}

fn check_nan(scores: &[f32], width: usize) -> Result<()> {
    if let Some(at) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NanScore {
            row: at / width.max(1),
            col: at % width.max(1),
        });
    }
    Ok(())
}

fn check_shape(q: usize, b: usize, scores: &[f32]) -> Result<()> {
    if q.checked_mul(b) != Some(scores.len()) {
        return Err(Error::ShapeMismatch(format!(
            "score matrix has {} entries, expected {q} x {b}",
            scores.len()
        )));
    }
    Ok(())
}

/// Per-query bounded tables of the best documents seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKState {
    k: usize,
    query_ids: Vec<RecordId>,
    rows: Vec<Vec<ScoredDoc>>,
}

impl TopKState {
    pub fn new(query_ids: Vec<RecordId>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidK);
        }
        let mut seen = HashSet::with_capacity(query_ids.len());
        if let Some(dup) = query_ids.iter().find(|q| !seen.insert(q.as_str())) {
            return Err(Error::DuplicateId(dup.to_string()));
        }
        let rows = vec![Vec::new(); query_ids.len()];
        Ok(TopKState { k, query_ids, rows })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn query_ids(&self) -> &[RecordId] {
        &self.query_ids
    }

    pub fn fill(&self, row: usize) -> usize {
        self.rows[row].len()
    }

    /// k-th best score of a full row, `-inf` until the row fills.
    pub fn threshold(&self, row: usize) -> f32 {
        let r = &self.rows[row];
        if r.len() < self.k {
            f32::NEG_INFINITY
        } else {
            r[self.k - 1].score
        }
    }

    /// Folds a batch into the state. `scores` is row-major, one row per
    /// query, one column per entry of `batch_ids`.
    pub fn update(&mut self, batch_ids: &[RecordId], scores: &[f32]) -> Result<()> {
        let b = batch_ids.len();
        check_shape(self.query_ids.len(), b, scores)?;
        check_nan(scores, b)?;
        let mut seen = HashSet::with_capacity(b);
        if let Some(dup) = batch_ids.iter().find(|d| !seen.insert(d.as_str())) {
            return Err(Error::DuplicateId(dup.to_string()));
        }
        if b == 0 {
            return Ok(());
        }

        let k = self.k;
        let mut hits: Vec<u32> = Vec::new();
        let mut cand: Vec<(f32, u32)> = Vec::new();
        for (qi, row_scores) in scores.chunks_exact(b).enumerate() {
            // Whole-row mask pass. `>=` keeps ties at the threshold so the
            // doc id rule can decide them.
            let thr = self.threshold(qi);
            hits.clear();
            hits.extend(
                row_scores
                    .iter()
                    .enumerate()
                    .filter(|(_, &s)| s >= thr)
                    .map(|(j, _)| j as u32),
            );
            if hits.is_empty() {
                continue;
            }

            let row = &self.rows[qi];
            // Candidates: existing entries tagged `b + i`, batch columns `j`.
            cand.clear();
            cand.extend(row.iter().enumerate().map(|(i, d)| (d.score, (b + i) as u32)));
            cand.extend(hits.iter().map(|&j| (row_scores[j as usize], j)));
            let id_of = |tag: u32| -> &str {
                let t = tag as usize;
                if t >= b {
                    row[t - b].doc_id.as_str()
                } else {
                    batch_ids[t].as_str()
                }
            };
            let cmp = |x: &(f32, u32), y: &(f32, u32)| rank_cmp(x.0, id_of(x.1), y.0, id_of(y.1));
            if cand.len() > k {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_unstable_by(cmp);
            let next: Vec<ScoredDoc> = cand
                .iter()
                .map(|&(score, tag)| {
                    let t = tag as usize;
                    let doc_id = if t >= b {
                        row[t - b].doc_id.clone()
                    } else {
                        batch_ids[t].clone()
                    };
                    ScoredDoc { doc_id, score }
                })
                .collect();
            self.rows[qi] = next;
        }
        Ok(())
    }

    /// Top-k of the union of two states. A doc present in both keeps its
    /// better-ranked entry.
    pub fn merge(&self, other: &TopKState) -> Result<TopKState> {
        if self.k != other.k {
            return Err(Error::IncompatibleStates(format!("k {} vs {}", self.k, other.k)));
        }
        if self.query_ids != other.query_ids {
            return Err(Error::IncompatibleStates("query id lists differ".into()));
        }
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| {
                let mut all: Vec<ScoredDoc> = a.iter().chain(b).cloned().collect();
                all.sort_unstable_by(|x, y| x.doc_id.cmp(&y.doc_id).then_with(|| doc_cmp(x, y)));
                all.dedup_by(|later, earlier| later.doc_id == earlier.doc_id);
                all.sort_unstable_by(doc_cmp);
                all.truncate(self.k);
                all
            })
            .collect();
        Ok(TopKState {
            k: self.k,
            query_ids: self.query_ids.clone(),
            rows,
        })
    }

    /// Ranked lists, aligned with `query_ids`. Read-only.
    pub fn finalize(&self) -> Vec<Vec<ScoredDoc>> {
        self.rows.clone()
    }
}

/// Scores of arbitrary (query, doc) pairs, recorded whenever they are scored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WatchList {
    by_query: HashMap<RecordId, HashSet<RecordId>>,
    recorded: BTreeMap<(RecordId, RecordId), f32>,
}

impl WatchList {
    pub fn new(pairs: impl IntoIterator<Item = (RecordId, RecordId)>) -> Self {
        let mut by_query: HashMap<RecordId, HashSet<RecordId>> = HashMap::new();
        for (q, d) in pairs {
            by_query.entry(q).or_default().insert(d);
        }
        WatchList {
            by_query,
            recorded: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }

    pub fn update(&mut self, query_ids: &[RecordId], batch_ids: &[RecordId], scores: &[f32]) -> Result<()> {
        let b = batch_ids.len();
        check_shape(query_ids.len(), b, scores)?;
        if self.by_query.is_empty() || b == 0 {
            return Ok(());
        }
        let cols: HashMap<&str, usize> =
            batch_ids.iter().enumerate().map(|(j, d)| (d.as_str(), j)).collect();
        for (qi, q) in query_ids.iter().enumerate() {
            let Some(docs) = self.by_query.get(q) else { continue };
            for d in docs {
                if let Some(&j) = cols.get(d.as_str()) {
                    self.recorded.insert((q.clone(), d.clone()), scores[qi * b + j]);
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, query_id: &str, doc_id: &str) -> Option<f32> {
        // Keys are owned ids; build a probe.
        let key = (RecordId::new(query_id).ok()?, RecordId::new(doc_id).ok()?);
        self.recorded.get(&key).copied()
    }

    pub fn recorded(&self) -> &BTreeMap<(RecordId, RecordId), f32> {
        &self.recorded
    }

    /// Union of recorded scores; `other` wins on overlap.
    pub fn absorb(&mut self, other: WatchList) {
        for (q, docs) in other.by_query {
            self.by_query.entry(q).or_default().extend(docs);
        }
        self.recorded.extend(other.recorded);
    }
}

/// Per-element binary-heap top-k, the reference the batched engine is
/// checked and timed against. Every element is pushed as an owned entry
/// and the worst popped once the heap exceeds k.
#[derive(Debug, Clone)]
pub struct NaiveHeapTopK {
    k: usize,
    heaps: Vec<std::collections::BinaryHeap<HeapEntry>>,
}

#[derive(Debug, Clone)]
struct HeapEntry(ScoredDoc);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // Greatest = worst ranked, so the max-heap pops the worst.
    fn cmp(&self, other: &Self) -> Ordering {
        doc_cmp(&self.0, &other.0)
    }
}

impl NaiveHeapTopK {
    pub fn new(num_queries: usize, k: usize) -> Self {
        NaiveHeapTopK {
            k,
            heaps: vec![std::collections::BinaryHeap::new(); num_queries],
        }
    }

    pub fn push(&mut self, query: usize, doc_id: &RecordId, score: f32) {
        let heap = &mut self.heaps[query];
        heap.push(HeapEntry(ScoredDoc {
            doc_id: doc_id.clone(),
            score,
        }));
        if heap.len() > self.k {
            heap.pop();
        }
    }

    pub fn update(&mut self, batch_ids: &[RecordId], scores: &[f32]) {
        let b = batch_ids.len();
        for (qi, row) in scores.chunks_exact(b.max(1)).enumerate().take(self.heaps.len()) {
            for (d, &s) in batch_ids.iter().zip(row) {
                self.push(qi, d, s);
            }
        }
    }

    pub fn finalize(&self) -> Vec<Vec<ScoredDoc>> {
        self.heaps
            .iter()
            .map(|h| h.clone().into_sorted_vec().into_iter().map(|e| e.0).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<RecordId> {
        names.iter().map(|n| RecordId::new(n).unwrap()).collect()
    }

    fn pairs(rows: &[Vec<ScoredDoc>]) -> Vec<Vec<(String, f32)>> {
        rows.iter()
            .map(|r| r.iter().map(|d| (d.doc_id.to_string(), d.score)).collect())
            .collect()
    }

    #[test]
    fn update_examples() {
        let mut st = TopKState::new(ids(&["q"]), 2).unwrap();
        st.update(&ids(&["d1", "d2"]), &[0.9, 0.5]).unwrap();
        st.update(&ids(&["d5", "d6"]), &[0.7, 0.4]).unwrap();
        assert_eq!(pairs(&st.finalize()), [vec![("d1".into(), 0.9), ("d5".into(), 0.7)]]);
        assert_eq!(st.threshold(0), 0.7);

        let mut st = TopKState::new(ids(&["q"]), 1).unwrap();
        st.update(&ids(&["db", "da"]), &[0.7, 0.7]).unwrap();
        assert_eq!(pairs(&st.finalize()), [vec![("da".into(), 0.7)]]);
        // A tie at the threshold with a smaller id still displaces.
        st.update(&ids(&["d0"]), &[0.7]).unwrap();
        assert_eq!(pairs(&st.finalize()), [vec![("d0".into(), 0.7)]]);
    }

    #[test]
    fn construction_and_errors() {
        let st = TopKState::new(ids(&["q1", "q2"]), 10).unwrap();
        assert_eq!((st.fill(0), st.fill(1)), (0, 0));
        assert!(matches!(TopKState::new(ids(&["q"]), 0), Err(Error::InvalidK)));
        assert!(TopKState::new(ids(&["q", "q"]), 1).is_err());
        let mut empty = TopKState::new(vec![], 3).unwrap();
        empty.update(&ids(&["d"]), &[]).unwrap();
        assert!(empty.finalize().is_empty());

        let mut st = TopKState::new(ids(&["q"]), 2).unwrap();
        assert!(matches!(st.update(&ids(&["a", "b"]), &[0.1]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(
            st.update(&ids(&["a", "b"]), &[0.1, f32::NAN]),
            Err(Error::NanScore { row: 0, col: 1 })
        ));
        assert!(st.update(&ids(&["a", "a"]), &[0.1, 0.2]).is_err());
        assert_eq!(st.fill(0), 0);
    }

    #[test]
    fn merge_rules() {
        let q = ids(&["q"]);
        let mut a = TopKState::new(q.clone(), 2).unwrap();
        a.update(&ids(&["x", "y"]), &[0.3, 0.2]).unwrap();
        let empty = TopKState::new(q.clone(), 2).unwrap();
        assert_eq!(a.merge(&empty).unwrap().finalize(), a.finalize());
        let mut b = TopKState::new(q.clone(), 2).unwrap();
        b.update(&ids(&["x", "z"]), &[0.3, 0.25]).unwrap();
        assert_eq!(
            pairs(&a.merge(&b).unwrap().finalize()),
            [vec![("x".into(), 0.3), ("z".into(), 0.25)]]
        );
        assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
        assert!(a.merge(&TopKState::new(q, 3).unwrap()).is_err());
        assert!(a.merge(&TopKState::new(ids(&["r"]), 2).unwrap()).is_err());
    }

    #[test]
    fn watchlist() {
        let q = ids(&["q1", "q2"]);
        let mut w = WatchList::new([(q[0].clone(), RecordId::new("d9").unwrap())]);
        w.update(&q, &ids(&["d1", "d9"]), &[0.5, 0.12, 0.3, 0.4]).unwrap();
        assert_eq!(w.get("q1", "d9"), Some(0.12));
        assert_eq!(w.get("q2", "d9"), None);
        w.update(&q, &ids(&["d9"]), &[0.12, 0.0]).unwrap();
        assert_eq!(w.get("q1", "d9"), Some(0.12));
        assert_eq!(w.recorded().len(), 1);
    }

    #[test]
    fn naive_heap_orders_ties() {
        let mut n = NaiveHeapTopK::new(1, 2);
        n.update(&ids(&["c", "b", "a"]), &[0.5, 0.5, 0.5]);
        assert_eq!(pairs(&n.finalize()), [vec![("a".into(), 0.5), ("b".into(), 0.5)]]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        // Coarse score grid so ties are frequent.
        fn stream() -> impl Strategy<Value = (usize, usize, usize, Vec<f32>, usize)> {
            (1usize..6, 1usize..60, 1usize..12).prop_flat_map(|(q, n, k)| {
                (
                    Just(q),
                    Just(n),
                    Just(k),
                    prop::collection::vec((-8i32..8).prop_map(|x| x as f32 / 4.0), q * n),
                    1usize..20,
                )
            })
        }

        fn docs(n: usize) -> Vec<RecordId> {
            // Shuffle-ish order so ids are not presented sorted.
            (0..n).map(|i| RecordId::new(&format!("d{:03}", (i * 37) % 101)).unwrap()).collect()
        }

        fn run(q: usize, n: usize, k: usize, scores: &[f32], batch: usize) -> TopKState {
            let d = docs(n);
            let qs = (0..q).map(|i| RecordId::new(&format!("q{i}")).unwrap()).collect();
            let mut st = TopKState::new(qs, k).unwrap();
            let mut start = 0;
            while start < n {
                let end = (start + batch).min(n);
                let m: Vec<f32> = (0..q)
                    .flat_map(|qi| scores[qi * n + start..qi * n + end].iter().copied())
                    .collect();
                st.update(&d[start..end], &m).unwrap();
                start = end;
            }
            st
        }

        fn sort_oracle(q: usize, n: usize, k: usize, scores: &[f32]) -> Vec<Vec<ScoredDoc>> {
            let d = docs(n);
            (0..q)
                .map(|qi| {
                    let mut all: Vec<ScoredDoc> = (0..n)
                        .map(|j| ScoredDoc { doc_id: d[j].clone(), score: scores[qi * n + j] })
                        .collect();
                    all.sort_by(doc_cmp);
                    all.truncate(k);
                    all
                })
                .collect()
        }

        proptest! {
            #[test]
            fn matches_full_sort((q, n, k, scores, batch) in stream()) {
                let st = run(q, n, k, &scores, batch);
                prop_assert_eq!(st.finalize(), sort_oracle(q, n, k, &scores));
                for (qi, row) in st.finalize().iter().enumerate() {
                    if row.len() == k {
                        prop_assert_eq!(st.threshold(qi), row[k - 1].score);
                    }
                }
            }

            #[test]
            fn batch_size_invariant((q, n, k, scores, batch) in stream()) {
                prop_assert_eq!(run(q, n, k, &scores, batch).finalize(), run(q, n, k, &scores, n).finalize());
            }

            #[test]
            fn merge_associative((q, n, k, scores, batch) in stream()) {
                // Split the corpus into three column ranges.
                let cut = |lo: usize, hi: usize| {
                    let sub: Vec<f32> = (0..q).flat_map(|qi| scores[qi * n + lo..qi * n + hi].iter().copied()).collect();
                    let d = docs(n)[lo..hi].to_vec();
                    let qs = (0..q).map(|i| RecordId::new(&format!("q{i}")).unwrap()).collect();
                    let mut st = TopKState::new(qs, k).unwrap();
                    for c in (0..d.len()).step_by(batch) {
                        let e = (c + batch).min(d.len());
                        let m: Vec<f32> = (0..q).flat_map(|qi| sub[qi * d.len() + c..qi * d.len() + e].iter().copied()).collect();
                        st.update(&d[c..e], &m).unwrap();
                    }
                    st
                };
                let (a, b, c) = (cut(0, n / 3), cut(n / 3, 2 * n / 3), cut(2 * n / 3, n));
                let left = a.merge(&b).unwrap().merge(&c).unwrap();
                let right = a.merge(&b.merge(&c).unwrap()).unwrap();
                prop_assert_eq!(left.finalize(), right.finalize());
                prop_assert_eq!(left.finalize(), sort_oracle(q, n, k, &scores));
            }
        }
    }
}

//! Exact dense retrieval over sharded corpus ranges, run files, and
//! hard-negative mining.

mod mining;
mod run;
mod shard;

pub use mining::{mine_hard_negatives, write_qrels_tsv, write_qrels_tsv_to, MiningConfig, MiningOutcome};
pub use run::{read_trec_run, write_trec_run, write_trec_run_to, RunResult};
pub use shard::{plan_shards, Shard, ShardPlan};

use crate::embedding::{dot, EmbeddingCache, Encoder};
use crate::error::{Error, Result, Side};
use crate::qrels::fetch;
use crate::record::RecordId;
use crate::store::StoreHandle;
use crate::topk::{TopKState, WatchList};

pub const DEFAULT_BATCH_SIZE: usize = 4096;

/// Resolves ids to vectors: cached rows first, otherwise encoded text.
#[derive(Clone, Copy)]
pub struct VectorSource<'a> {
    side: Side,
    store: Option<&'a StoreHandle>,
    cache: Option<&'a EmbeddingCache>,
    encoder: &'a dyn Encoder,
}

impl<'a> VectorSource<'a> {
    pub fn new(
        side: Side,
        store: Option<&'a StoreHandle>,
        cache: Option<&'a EmbeddingCache>,
        encoder: &'a dyn Encoder,
    ) -> Result<Self> {
        if let Some(c) = cache {
            if c.dim() != encoder.dim() {
                return Err(Error::DimensionMismatch {
                    expected: encoder.dim(),
                    actual: c.dim(),
                });
            }
        }
        if store.is_none() && cache.is_none() {
            return Err(Error::InvalidConfig(format!("no {side} store or embedding cache given")));
        }
        Ok(VectorSource {
            side,
            store,
            cache,
            encoder,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn vector_into(&self, id: &RecordId, out: &mut [f32]) -> Result<()> {
        if let Some(pos) = self.cache.and_then(|c| c.position(id.as_str())) {
            self.cache.unwrap().row_into(pos, out);
            return Ok(());
        }
        let store = self.store.ok_or_else(|| Error::MissingRecord {
            side: self.side,
            id: id.clone(),
        })?;
        let rec = fetch(store, self.side, id)?;
        self.encoder.encode_text_into(&rec.full_text(), out);
        Ok(())
    }

    pub fn matrix(&self, ids: &[RecordId]) -> Result<Vec<f32>> {
        let dim = self.dim();
        let mut out = vec![0f32; ids.len() * dim];
        for (id, row) in ids.iter().zip(out.chunks_exact_mut(dim.max(1))) {
            self.vector_into(id, row)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct RetrieveParams {
    pub k: usize,
    pub batch_size: usize,
    pub plan: ShardPlan,
}

#[derive(Debug)]
pub struct RetrieveOutput {
    pub run: RunResult,
    pub watch: WatchList,
    /// Filled top-k slots per lane before the merge, in worker order.
    pub lane_fill: Vec<usize>,
}

/// Scores every query against every corpus id. Each plan assignment runs on
/// its own thread with a private top-k state; states merge in worker order.
pub fn retrieve(
    query_ids: &[RecordId],
    queries: VectorSource<'_>,
    corpus_ids: &[RecordId],
    corpus: VectorSource<'_>,
    params: &RetrieveParams,
    watch: Option<&WatchList>,
) -> Result<RetrieveOutput> {
    if params.k == 0 {
        return Err(Error::InvalidK);
    }
    if params.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    if params.plan.total != corpus_ids.len() {
        return Err(Error::ShapeMismatch(format!(
            "plan covers {} items but the corpus has {}",
            params.plan.total,
            corpus_ids.len()
        )));
    }
    if queries.dim() != corpus.dim() {
        return Err(Error::DimensionMismatch {
            expected: queries.dim(),
            actual: corpus.dim(),
        });
    }
    let dim = queries.dim();
    let qmat = queries.matrix(query_ids)?;
    let empty_watch = WatchList::default();
    let watch_proto = watch.unwrap_or(&empty_watch);

    let lanes: Vec<Result<(TopKState, WatchList)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = params
            .plan
            .assignments
            .iter()
            .map(|shard| {
                let qmat = &qmat;
                let ids = &corpus_ids[shard.range()];
                scope.spawn(move || {
                    let mut state = TopKState::new(query_ids.to_vec(), params.k)?;
                    let mut watch = watch_proto.clone();
                    let mut dmat = Vec::new();
                    let mut scores = Vec::new();
                    for batch in ids.chunks(params.batch_size) {
                        dmat.clear();
                        dmat.resize(batch.len() * dim, 0.0);
                        for (id, row) in batch.iter().zip(dmat.chunks_exact_mut(dim)) {
                            corpus.vector_into(id, row)?;
                        }
                        scores.clear();
                        for q in qmat.chunks_exact(dim) {
                            scores.extend(dmat.chunks_exact(dim).map(|d| dot(q, d)));
                        }
                        state.update(batch, &scores)?;
                        if !watch.is_empty() {
                            watch.update(query_ids, batch, &scores)?;
                        }
                    }
                    Ok((state, watch))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("retrieval lane panicked"))
            .collect()
    });

    let mut merged: Option<TopKState> = None;
    let mut watch_out = watch_proto.clone();
    let mut lane_fill = Vec::with_capacity(lanes.len());
    for lane in lanes {
        let (state, w) = lane?;
        lane_fill.push((0..state.query_ids().len()).map(|r| state.fill(r)).sum());
        watch_out.absorb(w);
        merged = Some(match merged {
            None => state,
            Some(acc) => acc.merge(&state)?,
        });
    }
    let state = match merged {
        Some(s) => s,
        None => TopKState::new(query_ids.to_vec(), params.k)?,
    };
    Ok(RetrieveOutput {
        run: RunResult::from_state(&state),
        watch: watch_out,
        lane_fill,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashProjectionEncoder;
    use crate::record::TextRecord;
    use crate::store::StoreWriter;

    fn store(dir: &std::path::Path, name: &str, recs: &[(&str, &str)]) -> StoreHandle {
        let mut w = StoreWriter::in_memory();
        let mut s = Vec::new();
        for (id, text) in recs {
            w.push_text(&TextRecord::new(RecordId::new(id).unwrap(), None, *text).unwrap(), &mut s)
                .unwrap();
        }
        w.finish(&dir.join(name)).unwrap()
    }

    fn ids(s: &StoreHandle) -> Vec<RecordId> {
        s.ids().map(|i| RecordId::new(i).unwrap()).collect()
    }

    #[test]
    fn duplicate_text_ranks_first() {
        let dir = tempfile::tempdir().unwrap();
        let q = store(dir.path(), "q", &[("q1", "sparse retrieval with hashed features")]);
        let c = store(
            dir.path(),
            "c",
            &[
                ("a", "completely unrelated words here"),
                ("b", "sparse retrieval with hashed features"),
                ("c", "another topic entirely"),
            ],
        );
        let enc = HashProjectionEncoder::new(64, 3);
        let qs = VectorSource::new(Side::Query, Some(&q), None, &enc).unwrap();
        let cs = VectorSource::new(Side::Corpus, Some(&c), None, &enc).unwrap();
        let cids = ids(&c);
        let params = RetrieveParams {
            k: 10,
            batch_size: 2,
            plan: ShardPlan::equal(cids.len(), 2).unwrap(),
        };
        let out = retrieve(&ids(&q), qs, &cids, cs, &params, None).unwrap();
        let list = out.run.get("q1").unwrap();
        assert_eq!(list.len(), 3);
        assert_eq!(list[0].doc_id.as_str(), "b");
        assert!((list[0].score - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn plans_agree_and_watch_records() {
        let dir = tempfile::tempdir().unwrap();
        let words = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
        let docs: Vec<(String, String)> = (0..300)
            .map(|i| {
                (
                    format!("d{i:04}"),
                    format!("{} {} {}", words[i % 8], words[(i / 8) % 8], words[(i * 7) % 8]),
                )
            })
            .collect();
        let doc_refs: Vec<(&str, &str)> = docs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let c = store(dir.path(), "c", &doc_refs);
        let q = store(dir.path(), "q", &[("q1", "alpha beta"), ("q2", "gamma gamma delta")]);
        let enc = HashProjectionEncoder::new(16, 11);
        let qs = VectorSource::new(Side::Query, Some(&q), None, &enc).unwrap();
        let cs = VectorSource::new(Side::Corpus, Some(&c), None, &enc).unwrap();
        let (qids, cids) = (ids(&q), ids(&c));
        let watch = WatchList::new([(qids[0].clone(), cids[299].clone())]);
        let mut runs = Vec::new();
        for weights in [vec![1.0], vec![1.0; 4], vec![3.0, 1.0], vec![1.0; 8]] {
            let params = RetrieveParams {
                k: 20,
                batch_size: 7,
                plan: plan_shards(cids.len(), &weights).unwrap(),
            };
            let out = retrieve(&qids, qs, &cids, cs, &params, Some(&watch)).unwrap();
            assert!(out.watch.get("q1", "d0299").is_some());
            runs.push(out.run);
        }
        assert!(runs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn cache_dim_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let cache = crate::embedding::cache_vectors(
            dir.path().join("c.qkec"),
            3,
            &[RecordId::new("a").unwrap()],
            &[1.0, 0.0, 0.0],
        )
        .unwrap();
        let enc = HashProjectionEncoder::new(4, 0);
        assert!(matches!(
            VectorSource::new(Side::Corpus, None, Some(&cache), &enc),
            Err(Error::DimensionMismatch { expected: 4, actual: 3 })
        ));
    }
}

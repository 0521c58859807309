//! Deterministic synthetic fixtures for benchmarks and tests.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::rng::{derive_rng, sample_positions};

pub fn doc_id(i: usize) -> String {
    format!("d{i:07}")
}

pub fn query_id(i: usize) -> String {
    format!("q{i:06}")
}

/// Skewed word choice so some terms are common and most are rare.
fn word(rng: &mut ChaCha8Rng, vocab: usize) -> String {
    let u: f64 = rng.gen();
    format!("w{}", ((u * u * u) * vocab as f64) as usize)
}

fn sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| word(rng, 5000)).collect::<Vec<_>>().join(" ")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::io_at(path, e))?;
    Ok(BufWriter::with_capacity(1 << 20, f))
}

fn jsonl_line(w: &mut impl Write, id: &str, title: Option<&str>, text: &str) -> std::io::Result<()> {
    let v = match title {
        Some(t) => json!({"_id": id, "title": t, "text": text}),
        None => json!({"_id": id, "text": text}),
    };
    serde_json::to_writer(&mut *w, &v)?;
    w.write_all(b"\n")
}

/// `n` corpus records with titles, ids from [`doc_id`].
pub fn write_corpus(path: &Path, n: usize, seed: u64) -> Result<()> {
    let mut rng = derive_rng(seed, &[b"synth-corpus"]);
    let mut w = create(path)?;
    for i in 0..n {
        let title = sentence(&mut rng, 1, 3);
        let text = sentence(&mut rng, 6, 14);
        jsonl_line(&mut w, &doc_id(i), Some(&title), &text).map_err(|e| Error::io_at(path, e))?;
    }
    w.flush().map_err(|e| Error::io_at(path, e))
}

/// `n` query records, ids from [`query_id`].
pub fn write_queries(path: &Path, n: usize, seed: u64) -> Result<()> {
    let mut rng = derive_rng(seed, &[b"synth-queries"]);
    let mut w = create(path)?;
    for i in 0..n {
        let text = sentence(&mut rng, 2, 6);
        jsonl_line(&mut w, &query_id(i), None, &text).map_err(|e| Error::io_at(path, e))?;
    }
    w.flush().map_err(|e| Error::io_at(path, e))
}

/// `per_query` distinct judged docs for each of `n_queries` queries. The
/// first sampled doc gets a label in 1..=3; others are mostly 0.
pub fn write_qrels(path: &Path, n_queries: usize, per_query: usize, n_docs: usize, seed: u64) -> Result<u64> {
    let mut w = create(path)?;
    let mut lines = 0u64;
    writeln!(w, "query-id\tcorpus-id\tscore").map_err(|e| Error::io_at(path, e))?;
    for q in 0..n_queries {
        let qid = query_id(q);
        let mut rng = derive_rng(seed, &[b"synth-qrels", qid.as_bytes()]);
        let mut picks = sample_positions(&mut rng, n_docs, per_query.min(n_docs));
        // Decouple the positive from the smallest id.
        let lead = rng.gen_range(0..picks.len().max(1));
        picks.swap(0, lead);
        for (j, d) in picks.iter().enumerate() {
            let label = if j == 0 || rng.gen_bool(0.05) {
                rng.gen_range(1..=3)
            } else {
                0
            };
            writeln!(w, "{qid}\t{}\t{label}", doc_id(*d)).map_err(|e| Error::io_at(path, e))?;
            lines += 1;
        }
    }
    w.flush().map_err(|e| Error::io_at(path, e))?;
    Ok(lines)
}

#[derive(Debug, Clone)]
pub struct QrelFixture {
    pub queries: PathBuf,
    pub corpus: PathBuf,
    pub qrels: PathBuf,
    pub triples: u64,
}

/// Queries, corpus, and qrels under `dir`.
pub fn qrel_fixture(dir: &Path, n_queries: usize, per_query: usize, n_docs: usize, seed: u64) -> Result<QrelFixture> {
    let fx = QrelFixture {
        queries: dir.join("queries.jsonl"),
        corpus: dir.join("corpus.jsonl"),
        qrels: dir.join("qrels.tsv"),
        triples: 0,
    };
    write_queries(&fx.queries, n_queries, seed)?;
    write_corpus(&fx.corpus, n_docs, seed)?;
    let triples = write_qrels(&fx.qrels, n_queries, per_query, n_docs, seed)?;
    Ok(QrelFixture { triples, ..fx })
}

/// A corpus of `n_docs` plus `n_queries` queries, each built from words of
/// one target doc so rankings are non-trivial.
pub fn retrieval_fixture(dir: &Path, n_docs: usize, n_queries: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    if n_docs == 0 {
        return Err(Error::InvalidConfig("retrieval fixture needs at least one doc".into()));
    }
    let corpus = dir.join("corpus.jsonl");
    let queries = dir.join("queries.jsonl");
    write_corpus(&corpus, n_docs, seed)?;
    let mut doc_rng = derive_rng(seed, &[b"synth-corpus"]);
    let mut texts = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let _title = sentence(&mut doc_rng, 1, 3);
        texts.push(sentence(&mut doc_rng, 6, 14));
    }
    let mut rng = derive_rng(seed, &[b"synth-retrieval-queries"]);
    let mut w = create(&queries)?;
    for i in 0..n_queries {
        let target = &texts[rng.gen_range(0..n_docs)];
        let words: Vec<&str> = target.split(' ').collect();
        let take = rng.gen_range(2..=4).min(words.len());
        let start = rng.gen_range(0..=words.len() - take);
        let mut text = words[start..start + take].join(" ");
        text.push(' ');
        text.push_str(&word(&mut rng, 5000));
        jsonl_line(&mut w, &query_id(i), None, &text).map_err(|e| Error::io_at(&queries, e))?;
    }
    w.flush().map_err(|e| Error::io_at(&queries, e))?;
    Ok((queries, corpus))
}

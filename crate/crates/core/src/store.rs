//! Immutable, memory-mapped, ID-indexed record store.
//!
//! # File layout (`.qkst`)
//!
//! All integers little-endian.
//!
//! ```text
//! header   magic b"QKST" | version u16 | record_count u64
//! index    record_count x { id_len u16 | id bytes | offset u64 | len u64 }
//!          sorted strictly ascending by id (bytewise)
//! payload  concatenated record payloads; offsets are relative to its start
//! ```
//!
//! Text records use the payload encoding
//! `{ has_title u8 | [title_len u32 | title] | text_len u32 | text }`.
//! Other artifacts (grouped qrels) store their own bytes behind the same
//! index, so the store itself is payload-agnostic.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use memmap2::Mmap;
use serde_json::json;

use crate::atomic::AtomicFile;
use crate::cache::ArtifactCache;
use crate::error::{Error, Result};
use crate::fingerprint::{canonical_json, Fingerprint, Fingerprinter};
use crate::record::{parse_jsonl_record, RecordId, TextRecord};

pub const STORE_MAGIC: [u8; 4] = *b"QKST";
pub const STORE_VERSION: u16 = 1;
pub const STORE_EXTENSION: &str = "qkst";
const HEADER_LEN: usize = 4 + 2 + 8;

/// Whether an artifact came from the cache or was rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheOutcome {
    Hit,
    Miss,
}

/// An open store. Immutable and safe to share between threads.
pub struct StoreHandle {
    path: PathBuf,
    map: Mmap,
    /// Byte position of each index entry within the map.
    entry_pos: Vec<usize>,
    payload_start: usize,
    decoded: AtomicU64,
}

impl std::fmt::Debug for StoreHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoreHandle")
            .field("path", &self.path)
            .field("records", &self.len())
            .field("decoded", &self.decoded())
            .finish()
    }
}

fn read_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(bytes[at..at + 2].try_into().unwrap())
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

impl StoreHandle {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io_at(&path, e))?;
        // SAFETY: store files are only ever published by rename, never
        // modified in place, so the mapping stays valid for its lifetime.
        let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io_at(&path, e))?;
        let corrupt = |reason: &str| Error::corrupt(&path, reason);

        if map.len() < HEADER_LEN || map[..4] != STORE_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = read_u16(&map, 4);
        if version != STORE_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let count = usize::try_from(read_u64(&map, 6)).map_err(|_| corrupt("record count overflow"))?;
        if count > map.len() {
            return Err(corrupt("record count exceeds file size"));
        }

        let mut entry_pos = Vec::with_capacity(count);
        let mut pos = HEADER_LEN;
        let mut prev: Option<&[u8]> = None;
        for _ in 0..count {
            if pos + 2 > map.len() {
                return Err(corrupt("truncated index"));
            }
            let id_len = read_u16(&map, pos) as usize;
            let end = pos + 2 + id_len + 16;
            if end > map.len() {
                return Err(corrupt("truncated index"));
            }
            let id = &map[pos + 2..pos + 2 + id_len];
            if std::str::from_utf8(id).is_err() {
                return Err(corrupt("index id is not UTF-8"));
            }
            if prev.is_some_and(|p| p >= id) {
                return Err(corrupt("index not strictly ascending"));
            }
            prev = Some(id);
            entry_pos.push(pos);
            pos = end;
        }
        let payload_start = pos;
        let payload_len = (map.len() - payload_start) as u64;
        for &p in &entry_pos {
            let id_len = read_u16(&map, p) as usize;
            let offset = read_u64(&map, p + 2 + id_len);
            let len = read_u64(&map, p + 2 + id_len + 8);
            if offset.checked_add(len).is_none_or(|end| end > payload_len) {
                return Err(corrupt("payload slice out of bounds"));
            }
        }

        Ok(StoreHandle {
            path,
            map,
            entry_pos,
            payload_start,
            decoded: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entry_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entry_pos.is_empty()
    }

    /// Number of payloads decoded since open.
    pub fn decoded(&self) -> u64 {
        self.decoded.load(Ordering::Relaxed)
    }

    fn id_bytes_at(&self, i: usize) -> &[u8] {
        let p = self.entry_pos[i];
        let id_len = read_u16(&self.map, p) as usize;
        &self.map[p + 2..p + 2 + id_len]
    }

    /// Id of the `i`-th record in ascending id order. Never decodes payload.
    pub fn id_at(&self, i: usize) -> &str {
        // Validated as UTF-8 on open.
        unsafe { std::str::from_utf8_unchecked(self.id_bytes_at(i)) }
    }

    pub fn ids(&self) -> impl ExactSizeIterator<Item = &str> + '_ {
        (0..self.len()).map(move |i| self.id_at(i))
    }

    /// Binary search over the index.
    pub fn position(&self, id: &str) -> Option<usize> {
        let needle = id.as_bytes();
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match self.id_bytes_at(mid).cmp(needle) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    pub fn contains(&self, id: &str) -> bool {
        self.position(id).is_some()
    }

    /// Raw payload of the `i`-th record; counts as one decode.
    pub fn bytes_at(&self, i: usize) -> &[u8] {
        let p = self.entry_pos[i];
        let id_len = read_u16(&self.map, p) as usize;
        let offset = read_u64(&self.map, p + 2 + id_len) as usize;
        let len = read_u64(&self.map, p + 2 + id_len + 8) as usize;
        self.decoded.fetch_add(1, Ordering::Relaxed);
        &self.map[self.payload_start + offset..self.payload_start + offset + len]
    }

    pub fn get_bytes(&self, id: &str) -> Result<&[u8]> {
        match self.position(id) {
            Some(i) => Ok(self.bytes_at(i)),
            None => Err(Error::NotFound(RecordId::new(id)?)),
        }
    }

    pub fn record_at(&self, i: usize) -> Result<TextRecord> {
        let bytes = self.bytes_at(i);
        decode_text_payload(self.id_at(i), bytes).map_err(|reason| Error::corrupt(&self.path, reason))
    }

    pub fn get_record(&self, id: &str) -> Result<TextRecord> {
        match self.position(id) {
            Some(i) => self.record_at(i),
            None => Err(Error::NotFound(RecordId::new(id)?)),
        }
    }
}

pub(crate) fn encode_text_payload(rec: &TextRecord, out: &mut Vec<u8>) {
    match &rec.title {
        Some(title) => {
            out.push(1);
            out.extend_from_slice(&(title.len() as u32).to_le_bytes());
            out.extend_from_slice(title.as_bytes());
        }
        None => out.push(0),
    }
    out.extend_from_slice(&(rec.text.len() as u32).to_le_bytes());
    out.extend_from_slice(rec.text.as_bytes());
}

fn decode_text_payload(id: &str, bytes: &[u8]) -> std::result::Result<TextRecord, String> {
    let take_str = |at: usize| -> std::result::Result<(String, usize), String> {
        if at + 4 > bytes.len() {
            return Err(format!("truncated payload for {id}"));
        }
        let len = read_u32(bytes, at) as usize;
        let end = at + 4 + len;
        let s = bytes
            .get(at + 4..end)
            .ok_or_else(|| format!("truncated payload for {id}"))?;
        let s = std::str::from_utf8(s).map_err(|_| format!("payload for {id} is not UTF-8"))?;
        Ok((s.to_owned(), end))
    };
    let (title, at) = match bytes.first() {
        Some(0) => (None, 1),
        Some(1) => {
            let (t, at) = take_str(1)?;
            (Some(t), at)
        }
        _ => return Err(format!("bad title flag for {id}")),
    };
    let (text, end) = take_str(at)?;
    if end != bytes.len() {
        return Err(format!("trailing bytes in payload for {id}"));
    }
    let id = RecordId::new(id).map_err(|e| e.to_string())?;
    Ok(TextRecord { id, title, text })
}

enum Spool {
    Memory(Vec<u8>),
    File(io::BufWriter<File>),
}

/// Accumulates (id, payload) pairs in any order and writes a sorted store.
///
/// Payload bytes are spooled (to memory or to an anonymous temp file);
/// only ids and offsets are held in memory.
pub struct StoreWriter {
    index: Vec<(RecordId, u64, u64)>,
    spool: Spool,
    written: u64,
}

impl Default for StoreWriter {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl StoreWriter {
    pub fn in_memory() -> Self {
        StoreWriter {
            index: Vec::new(),
            spool: Spool::Memory(Vec::new()),
            written: 0,
        }
    }

    /// Spools payloads to an unnamed temp file in `dir`.
    pub fn spooled_in(dir: &Path) -> Result<Self> {
        let file = tempfile::tempfile_in(dir).map_err(|e| Error::io_at(dir, e))?;
        Ok(StoreWriter {
            index: Vec::new(),
            spool: Spool::File(io::BufWriter::with_capacity(1 << 16, file)),
            written: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn push(&mut self, id: RecordId, payload: &[u8]) -> Result<()> {
        if id.as_str().len() > u16::MAX as usize {
            return Err(Error::InvalidId(id.to_string()));
        }
        match &mut self.spool {
            Spool::Memory(buf) => buf.extend_from_slice(payload),
            Spool::File(w) => w.write_all(payload)?,
        }
        self.index.push((id, self.written, payload.len() as u64));
        self.written += payload.len() as u64;
        Ok(())
    }

    pub fn push_text(&mut self, rec: &TextRecord, scratch: &mut Vec<u8>) -> Result<()> {
        scratch.clear();
        encode_text_payload(rec, scratch);
        self.push(rec.id.clone(), scratch)
    }

    /// Sorts the index, rejects duplicate ids, and writes the store.
    pub fn finish_to(mut self, out: &mut dyn Write) -> Result<()> {
        self.index.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = self.index.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateId(w[0].0.to_string()));
        }
        out.write_all(&STORE_MAGIC)?;
        out.write_all(&STORE_VERSION.to_le_bytes())?;
        out.write_all(&(self.index.len() as u64).to_le_bytes())?;
        for (id, offset, len) in &self.index {
            out.write_all(&(id.as_str().len() as u16).to_le_bytes())?;
            out.write_all(id.as_str().as_bytes())?;
            out.write_all(&offset.to_le_bytes())?;
            out.write_all(&len.to_le_bytes())?;
        }
        match self.spool {
            Spool::Memory(buf) => out.write_all(&buf)?,
            Spool::File(w) => {
                let mut file = w.into_inner().map_err(|e| e.into_error())?;
                file.seek(SeekFrom::Start(0))?;
                io::copy(&mut (&mut file).take(self.written), out)?;
            }
        }
        Ok(())
    }

    /// Atomically publishes the store at `path` and opens it.
    pub fn finish(self, path: &Path) -> Result<StoreHandle> {
        let mut file = AtomicFile::create(path)?;
        self.finish_to(&mut file)?;
        file.commit()?;
        StoreHandle::open(path)
    }
}

/// Streams a JSONL file of records into `writer`, returning the count.
fn spool_jsonl(records_path: &Path, writer: &mut StoreWriter) -> Result<u64> {
    let file = File::open(records_path).map_err(|e| Error::io_at(records_path, e))?;
    let mut reader = BufReader::with_capacity(1 << 16, file);
    let mut line = String::new();
    let mut scratch = Vec::new();
    let mut line_no = 0u64;
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::io_at(records_path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_jsonl_record(records_path, line_no, line.trim_end_matches(['\n', '\r']))?;
        writer.push_text(&rec, &mut scratch)?;
    }
    Ok(line_no)
}

/// Builds `<out_dir>/<stem>.qkst` from a JSONL file and opens it.
pub fn build_store(records_path: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<StoreHandle> {
    let records_path = records_path.as_ref();
    let stem = records_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "records".into());
    let target = out_dir.as_ref().join(format!("{stem}.{STORE_EXTENSION}"));
    build_store_at(records_path, &target)
}

/// Builds a store at an explicit target path.
pub fn build_store_at(records_path: &Path, target: &Path) -> Result<StoreHandle> {
    let spool_dir = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut writer = StoreWriter::spooled_in(spool_dir)?;
    spool_jsonl(records_path, &mut writer)?;
    writer.finish(target)
}

/// Fingerprint of a JSONL records file as a text store under `seed`.
pub fn text_store_fingerprint(records_path: &Path, seed: u64) -> Result<Fingerprint> {
    let mut fp = Fingerprinter::new();
    fp.file(records_path)?;
    Ok(fp.finish(&canonical_json(&json!({
        "artifact": "text-store",
        "version": STORE_VERSION,
        "seed": seed,
    }))))
}

/// Opens the cached store for `records_path`, building it on a miss.
pub fn open_or_build_cached(
    records_path: &Path,
    cache: &ArtifactCache,
    seed: u64,
) -> Result<(StoreHandle, CacheOutcome, Fingerprint)> {
    let fp = text_store_fingerprint(records_path, seed)?;
    if let Some(path) = cache.lookup(&fp) {
        match StoreHandle::open(&path) {
            Ok(store) => return Ok((store, CacheOutcome::Hit, fp)),
            Err(e) => tracing::warn!(error = %e, "cached store unreadable, rebuilding"),
        }
    }
    let mut writer = StoreWriter::spooled_in(cache.dir())?;
    spool_jsonl(records_path, &mut writer)?;
    let store = writer.finish(&cache.artifact_path(&fp))?;
    cache.publish_marker(&fp)?;
    Ok((store, CacheOutcome::Miss, fp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_jsonl(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn build_and_get() {
        let dir = tempfile::tempdir().unwrap();
        let src = write_jsonl(
            dir.path(),
            "corpus.jsonl",
            &[
                r#"{"_id":"d3","text":"third"}"#,
                r#"{"_id":"d1","title":"One","text":"first"}"#,
                r#"{"_id":"d2","text":"second"}"#,
            ],
        );
        let store = build_store(&src, dir.path()).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.ids().collect::<Vec<_>>(), ["d1", "d2", "d3"]);
        assert!(dir.path().join("corpus.qkst").exists());
        assert_eq!(store.decoded(), 0);

        let d2 = store.get_record("d2").unwrap();
        assert_eq!(d2.text, "second");
        assert_eq!(d2.title, None);
        assert_eq!(store.decoded(), 1);

        let d1 = store.get_record("d1").unwrap();
        assert_eq!(d1.title.as_deref(), Some("One"));
        assert_eq!(store.decoded(), 2);

        match store.get_record("zz") {
            Err(Error::NotFound(id)) => assert_eq!(id.as_str(), "zz"),
            other => panic!("expected NotFound, got {other:?}"),
        }
        assert_eq!(store.decoded(), 2);
    }

    #[test]
    fn empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let src = write_jsonl(dir.path(), "empty.jsonl", &[]);
        let store = build_store(&src, dir.path()).unwrap();
        assert_eq!(store.len(), 0);
        assert!(store.get_record("d1").is_err());
    }

    #[test]
    fn duplicate_id_named() {
        let dir = tempfile::tempdir().unwrap();
        let src = write_jsonl(
            dir.path(),
            "dup.jsonl",
            &[r#"{"_id":"d1","text":"a"}"#, r#"{"_id":"d1","text":"b"}"#],
        );
        match build_store(&src, dir.path()) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "d1"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
        assert!(!dir.path().join("dup.qkst").exists());
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let src = write_jsonl(
            dir.path(),
            "bad.jsonl",
            &[r#"{"_id":"d1","text":"a"}"#, r#"{"_id": "d2", "text": "#],
        );
        let err = build_store(&src, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let src = write_jsonl(dir.path(), "noid.jsonl", &[r#"{"text":"a"}"#]);
        let err = build_store(&src, dir.path()).unwrap_err();
        assert!(err.to_string().contains("_id"));
    }

    #[test]
    fn thousand_gets_count_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> = (0..1000)
            .map(|i| format!(r#"{{"_id":"doc{i:04}","text":"body {i}"}}"#))
            .collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let src = write_jsonl(dir.path(), "big.jsonl", &refs);
        let store = build_store(&src, dir.path()).unwrap();
        for i in 0..1000 {
            let rec = store.get_record(&format!("doc{i:04}")).unwrap();
            assert_eq!(rec.text, format!("body {i}"));
        }
        assert_eq!(store.decoded(), 1000);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.qkst");
        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(StoreHandle::open(&path), Err(Error::Corrupt { .. })));

        let mut w = StoreWriter::in_memory();
        w.push(RecordId::new("a").unwrap(), b"payload").unwrap();
        let mut bytes = Vec::new();
        w.finish_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(StoreHandle::open(&path), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn cached_build_hits_on_rerun_and_misses_on_change() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ArtifactCache::open(dir.path().join("cache")).unwrap();
        let src = write_jsonl(dir.path(), "q.jsonl", &[r#"{"_id":"q1","text":"hello"}"#]);
        let (_, first, fp1) = open_or_build_cached(&src, &cache, 42).unwrap();
        let (store, second, fp2) = open_or_build_cached(&src, &cache, 42).unwrap();
        assert_eq!((first, second), (CacheOutcome::Miss, CacheOutcome::Hit));
        assert_eq!(fp1, fp2);
        assert_eq!(store.get_record("q1").unwrap().text, "hello");

        fs::write(&src, r#"{"_id":"q1","text":"hellp"}"#).unwrap();
        let (_, third, fp3) = open_or_build_cached(&src, &cache, 42).unwrap();
        assert_eq!(third, CacheOutcome::Miss);
        assert_ne!(fp1, fp3);
        let (_, other_seed, _) = open_or_build_cached(&src, &cache, 7).unwrap();
        assert_eq!(other_seed, CacheOutcome::Miss);
    }

    #[test]
    fn cached_build_surfaces_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ArtifactCache::open(dir.path().join("cache")).unwrap();
        let src = write_jsonl(
            dir.path(),
            "dup.jsonl",
            &[r#"{"_id":"x","text":"a"}"#, r#"{"_id":"x","text":"b"}"#],
        );
        match open_or_build_cached(&src, &cache, 0) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "x"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }
}

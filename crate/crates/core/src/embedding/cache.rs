//! Memory-mapped embedding cache.
//!
//! # File layout (`.qkec`)
//!
//! ```text
//! header   magic b"QKEC" | version u16 | dim u32 | count u64 | dtype u8 (0 = f32 LE)
//! index    count x { id_len u16 | id bytes }, strictly ascending
//! payload  count x dim f32 LE, rows in index order
//! ```
//!
//! A cache is readable only once `<file>.ok` exists and records the file
//! length. The builder removes any old marker before publishing.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use memmap2::Mmap;

use crate::atomic::{atomic_write, AtomicFile};
use crate::error::{Error, Result};
use crate::record::RecordId;

pub const CACHE_MAGIC: [u8; 4] = *b"QKEC";
pub const CACHE_EXTENSION: &str = "qkec";
const CACHE_VERSION: u16 = 1;
const DTYPE_F32_LE: u8 = 0;
const HEADER_LEN: usize = 4 + 2 + 4 + 8 + 1;
const MARKER_PREFIX: &str = "qrelkit-embeddings";

fn marker_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".ok");
    PathBuf::from(name)
}

/// Accumulates vectors, then sorts and atomically publishes them.
#[derive(Debug)]
pub struct EmbeddingCacheBuilder {
    path: PathBuf,
    dim: usize,
    ids: Vec<RecordId>,
    seen: HashSet<RecordId>,
    values: Vec<f32>,
}

impl EmbeddingCacheBuilder {
    pub fn new(path: impl Into<PathBuf>, dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!("invalid embedding dim {dim}")));
        }
        Ok(EmbeddingCacheBuilder {
            path: path.into(),
            dim,
            ids: Vec::new(),
            seen: HashSet::new(),
            values: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends a batch. `vectors` is row-major, `ids.len()` rows of `dim`.
    /// The batch is rejected as a whole on any error.
    pub fn cache_records(&mut self, ids: &[RecordId], vectors: &[f32]) -> Result<()> {
        if !vectors.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vectors.len() % self.dim,
            });
        }
        if vectors.len() / self.dim != ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids but {} vectors",
                ids.len(),
                vectors.len() / self.dim
            )));
        }
        let mut batch = HashSet::with_capacity(ids.len());
        for (id, row) in ids.iter().zip(vectors.chunks_exact(self.dim)) {
            if self.seen.contains(id) || !batch.insert(id) {
                return Err(Error::DuplicateId(id.to_string()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidRecord {
                    id: id.to_string(),
                    reason: "embedding has a non-finite entry".into(),
                });
            }
        }
        self.seen.extend(ids.iter().cloned());
        self.ids.extend_from_slice(ids);
        self.values.extend_from_slice(vectors);
        Ok(())
    }

    pub fn cache_record(&mut self, id: RecordId, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.cache_records(std::slice::from_ref(&id), vector)
    }

    /// Sorts by id, writes the file atomically, then publishes the marker.
    pub fn finalize(self) -> Result<EmbeddingCache> {
        let marker = marker_path(&self.path);
        match fs::remove_file(&marker) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io_at(&marker, e)),
        }
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_unstable_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));

        let mut file = AtomicFile::create(&self.path)?;
        {
            let mut w = BufWriter::with_capacity(1 << 16, &mut file);
            let io = |e| Error::io_at(&self.path, e);
            w.write_all(&CACHE_MAGIC).map_err(io)?;
            w.write_all(&CACHE_VERSION.to_le_bytes()).map_err(io)?;
            w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&(self.ids.len() as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&[DTYPE_F32_LE]).map_err(io)?;
            for &i in &order {
                let id = self.ids[i].as_str().as_bytes();
                let len = u16::try_from(id.len())
                    .map_err(|_| Error::InvalidId(self.ids[i].to_string()))?;
                w.write_all(&len.to_le_bytes()).map_err(io)?;
                w.write_all(id).map_err(io)?;
            }
            for &i in &order {
                for v in &self.values[i * self.dim..(i + 1) * self.dim] {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
            w.flush().map_err(io)?;
        }
        file.commit()?;
        let len = fs::metadata(&self.path)
            .map_err(|e| Error::io_at(&self.path, e))?
            .len();
        atomic_write(&marker, format!("{MARKER_PREFIX} {len}\n").as_bytes())?;
        EmbeddingCache::open(&self.path)
    }
}

/// Writes `ids` with row-major `vectors` to a finalized cache at `path`.
pub fn cache_vectors(
    path: impl Into<PathBuf>,
    dim: usize,
    ids: &[RecordId],
    vectors: &[f32],
) -> Result<EmbeddingCache> {
    let mut builder = EmbeddingCacheBuilder::new(path, dim)?;
    builder.cache_records(ids, vectors)?;
    builder.finalize()
}

/// A published, read-only embedding cache.
pub struct EmbeddingCache {
    path: PathBuf,
    map: Mmap,
    dim: usize,
    id_spans: Vec<(usize, usize)>,
    payload_start: usize,
    decoded: AtomicU64,
}

impl std::fmt::Debug for EmbeddingCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingCache")
            .field("path", &self.path)
            .field("dim", &self.dim)
            .field("len", &self.id_spans.len())
            .finish()
    }
}

impl EmbeddingCache {
    /// Opens a finalized cache; a missing or stale marker is `CacheAbsent`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let absent = || Error::CacheAbsent(path.clone());
        let marker = fs::read_to_string(marker_path(&path)).map_err(|_| absent())?;
        let file = File::open(&path).map_err(|_| absent())?;
        let file_len = file.metadata().map_err(|e| Error::io_at(&path, e))?.len();
        if marker != format!("{MARKER_PREFIX} {file_len}\n") {
            return Err(absent());
        }
        // SAFETY: caches are published by rename and never modified in place.
        let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io_at(&path, e))?;
        let corrupt = |reason: &str| Error::corrupt(&path, reason);

        if map.len() < HEADER_LEN || map[..4] != CACHE_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes([map[4], map[5]]);
        if version != CACHE_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(map[6..10].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(map[10..18].try_into().unwrap());
        if map[18] != DTYPE_F32_LE {
            return Err(corrupt("unsupported dtype"));
        }
        if dim == 0 || count > map.len() as u64 {
            return Err(corrupt("invalid header"));
        }
        let count = count as usize;
        let mut id_spans = Vec::with_capacity(count);
        let mut pos = HEADER_LEN;
        let mut prev: Option<&[u8]> = None;
        for _ in 0..count {
            let len_bytes = map.get(pos..pos + 2).ok_or_else(|| corrupt("truncated index"))?;
            let len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
            let id = map
                .get(pos + 2..pos + 2 + len)
                .ok_or_else(|| corrupt("truncated index"))?;
            if std::str::from_utf8(id).is_err() {
                return Err(corrupt("index id is not UTF-8"));
            }
            if prev.is_some_and(|p| p >= id) {
                return Err(corrupt("index not strictly ascending"));
            }
            prev = Some(id);
            id_spans.push((pos + 2, len));
            pos += 2 + len;
        }
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(pos));
        if expected != Some(map.len()) {
            return Err(corrupt("payload size does not match header"));
        }
        Ok(EmbeddingCache {
            path,
            map,
            dim,
            id_spans,
            payload_start: pos,
            decoded: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.id_spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_spans.is_empty()
    }

    /// Vectors decoded since open.
    pub fn decoded(&self) -> u64 {
        self.decoded.load(Ordering::Relaxed)
    }

    pub fn id_at(&self, i: usize) -> &str {
        let (start, len) = self.id_spans[i];
        // Validated as UTF-8 on open.
        std::str::from_utf8(&self.map[start..start + len]).unwrap()
    }

    pub fn ids(&self) -> impl ExactSizeIterator<Item = &str> + '_ {
        (0..self.len()).map(|i| self.id_at(i))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match self.id_at(mid).as_bytes().cmp(id.as_bytes()) {
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

    /// Decodes row `i` into `out`.
    pub fn row_into(&self, i: usize, out: &mut [f32]) {
        assert_eq!(out.len(), self.dim);
        let start = self.payload_start + i * self.dim * 4;
        let bytes = &self.map[start..start + self.dim * 4];
        for (o, chunk) in out.iter_mut().zip(bytes.chunks_exact(4)) {
            *o = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        self.decoded.fetch_add(1, Ordering::Relaxed);
    }

    pub fn vector_at(&self, i: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        self.row_into(i, &mut out);
        out
    }

    /// `cache_get`: the vector for `id`, or `None` on a miss.
    pub fn get(&self, id: &str) -> Option<Vec<f32>> {
        self.position(id).map(|i| self.vector_at(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<RecordId> {
        names.iter().map(|n| RecordId::new(n).unwrap()).collect()
    }

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.qkec");
        let vecs = [0.1f32, -2.5, f32::MIN_POSITIVE, 3.0, 1e-30, -0.0];
        let mut b = EmbeddingCacheBuilder::new(&path, 2).unwrap();
        b.cache_records(&ids(&["z", "a"]), &vecs[..4]).unwrap();
        b.cache_record(RecordId::new("m").unwrap(), &vecs[4..]).unwrap();
        let cache = b.finalize().unwrap();
        assert_eq!(cache.ids().collect::<Vec<_>>(), ["a", "m", "z"]);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&cache.get("z").unwrap()), bits(&vecs[..2]));
        assert_eq!(bits(&cache.get("a").unwrap()), bits(&vecs[2..4]));
        assert_eq!(bits(&cache.get("m").unwrap()), bits(&vecs[4..]));
        assert_eq!(cache.decoded(), 3);
        assert!(cache.get("q").is_none());
        assert_eq!(cache.decoded(), 3);
    }

    #[test]
    fn rejects_bad_batches() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = EmbeddingCacheBuilder::new(dir.path().join("c.qkec"), 2).unwrap();
        b.cache_records(&ids(&["a"]), &[1.0, 0.0]).unwrap();
        assert!(matches!(
            b.cache_records(&ids(&["b", "a"]), &[0.0; 4]),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
        assert!(matches!(
            b.cache_records(&ids(&["c", "c"]), &[0.0; 4]),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            b.cache_records(&ids(&["d"]), &[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(b.cache_records(&ids(&["e"]), &[f32::NAN, 0.0]).is_err());
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn unfinalized_cache_is_absent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.qkec");
        let mut b = EmbeddingCacheBuilder::new(&path, 2).unwrap();
        b.cache_records(&ids(&["a"]), &[1.0, 0.0]).unwrap();
        drop(b);
        assert!(matches!(EmbeddingCache::open(&path), Err(Error::CacheAbsent(_))));

        cache_vectors(&path, 2, &ids(&["a"]), &[1.0, 0.0]).unwrap();
        // Truncation invalidates the marker.
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(EmbeddingCache::open(&path), Err(Error::CacheAbsent(_))));
    }

    #[test]
    fn republish_replaces_old_cache() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.qkec");
        cache_vectors(&path, 2, &ids(&["a"]), &[1.0, 0.0]).unwrap();
        let old = EmbeddingCache::open(&path).unwrap();
        cache_vectors(&path, 3, &ids(&["b"]), &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(old.get("a").unwrap(), [1.0, 0.0]);
        let new = EmbeddingCache::open(&path).unwrap();
        assert_eq!(new.dim(), 3);
        assert!(new.get("a").is_none());
    }
}

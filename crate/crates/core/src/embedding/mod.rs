//! Text encoders, dot-product scoring and the embedding cache.

mod cache;

pub use cache::{cache_vectors, EmbeddingCache, EmbeddingCacheBuilder, CACHE_EXTENSION, CACHE_MAGIC};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::record::TextRecord;

pub const HASH_PROJECTION: &str = "hash-projection";

/// Maps text to a fixed-length f32 vector. Implementations must be pure.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes the embedding of `text` into `out` (`out.len() == dim`).
    fn encode_text_into(&self, text: &str, out: &mut [f32]);

    fn encode_text(&self, text: &str) -> Vec<f32> {
        let mut out = vec![0.0; self.dim()];
        self.encode_text_into(text, &mut out);
        out
    }

    fn encode(&self, rec: &TextRecord) -> Vec<f32> {
        self.encode_text(&rec.full_text())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub name: String,
    pub dim: usize,
    pub seed: u64,
}

impl EncoderSpec {
    pub fn hash_projection(dim: usize, seed: u64) -> Self {
        EncoderSpec {
            name: HASH_PROJECTION.to_owned(),
            dim,
            seed,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Encoder>> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "encoder dim must be at least 2, got {}",
                self.dim
            )));
        }
        match self.name.as_str() {
            HASH_PROJECTION => Ok(Box::new(HashProjectionEncoder::new(self.dim, self.seed))),
            other => Err(Error::InvalidConfig(format!(
                "unknown encoder {other:?}; available: {HASH_PROJECTION}"
            ))),
        }
    }
}

/// Signed feature hashing over lowercased whitespace tokens.
///
/// Each token hashes (XXH3-64, seeded) to a bucket `h % dim` and adds +1,
/// or -1 when bit 63 of the hash is set. The sum is L2-normalized; text
/// with no tokens, or whose contributions cancel, encodes to `e0`.
#[derive(Debug, Clone, Copy)]
pub struct HashProjectionEncoder {
    dim: usize,
    seed: u64,
}

impl HashProjectionEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 2, "dim must be at least 2");
        HashProjectionEncoder { dim, seed }
    }
}

impl Encoder for HashProjectionEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_text_into(&self, text: &str, out: &mut [f32]) {
        assert_eq!(out.len(), self.dim);
        let mut acc = vec![0f64; self.dim];
        for token in text.split_whitespace() {
            let h = xxh3_64_with_seed(token.to_lowercase().as_bytes(), self.seed);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[(h % self.dim as u64) as usize] += sign;
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            out.fill(0.0);
            out[0] = 1.0;
        } else {
            for (o, a) in out.iter_mut().zip(&acc) {
                *o = (a / norm) as f32;
            }
        }
    }
}

/// Dot product accumulated in f64 in index order, rounded to f32.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum::<f64>() as f32
}

/// Scores `q` against each row of the row-major `docs` matrix.
pub fn similarity(q: &[f32], docs: &[f32]) -> Result<Vec<f32>> {
    let dim = q.len();
    if dim == 0 || !docs.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: if dim == 0 { docs.len() } else { docs.len() % dim },
        });
    }
    Ok(docs.chunks_exact(dim).map(|d| dot(q, d)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(v: &[f32]) -> Vec<u32> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn golden_vectors() {
        // Reference values from an independent scalar implementation.
        let enc = HashProjectionEncoder::new(8, 7);
        assert_eq!(
            bits(&enc.encode_text("apple pie")),
            [0, 0, 0, 0, 0, 0xbf3504f3, 0, 0xbf3504f3]
        );
        let enc = HashProjectionEncoder::new(16, 42);
        assert_eq!(
            bits(&enc.encode_text("The quick brown fox jumps over THE lazy dog the end")),
            [
                0x00000000, 0x3e4511a3, 0xbe4511a3, 0x00000000, 0x00000000, 0xbf4511a3,
                0x00000000, 0xbe4511a3, 0x00000000, 0x00000000, 0x00000000, 0xbec511a3,
                0x3ec511a3, 0x00000000, 0x00000000, 0x00000000
            ]
        );
    }

    #[test]
    fn degenerate_and_scaling() {
        let enc = HashProjectionEncoder::new(32, 1);
        let mut e0 = vec![0.0; 32];
        e0[0] = 1.0;
        assert_eq!(enc.encode_text(""), e0);
        assert_eq!(enc.encode_text(" \t\u{2003}\n"), e0);
        assert_eq!(
            bits(&enc.encode_text("apple apple")),
            bits(&enc.encode_text("Apple"))
        );
    }

    #[test]
    fn unit_norm_and_self_similarity() {
        let enc = HashProjectionEncoder::new(64, 9);
        for text in ["a b c", "retrieval of dense vectors", "x y z w v u t s r q"] {
            let v = enc.encode_text(text);
            let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-5);
            assert!((dot(&v, &v) - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn similarity_matches_scalar_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let q: Vec<f32> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let docs: Vec<f32> = (0..64 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = similarity(&q, &docs).unwrap();
        for (j, s) in got.iter().enumerate() {
            let mut oracle = 0.0f64;
            for i in 0..64 {
                oracle += q[i] as f64 * docs[j * 64 + i] as f64;
            }
            assert!((*s as f64 - oracle).abs() <= 1e-6);
        }
        let mut e1 = vec![0.0; 4];
        e1[1] = 1.0;
        assert_eq!(similarity(&[1.0, 0.0, 0.0, 0.0], &e1).unwrap(), [0.0]);
        assert!(similarity(&q, &docs[..10]).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(EncoderSpec::hash_projection(1, 0).build().is_err());
        assert!(EncoderSpec { name: "bert".into(), dim: 8, seed: 0 }.build().is_err());
        assert_eq!(EncoderSpec::hash_projection(8, 0).build().unwrap().dim(), 8);
    }
}

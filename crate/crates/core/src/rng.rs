//! Deterministic RNG derivation.
//!
//! Every random choice is seeded from the global seed plus the identity of
//! the thing being sampled (a salt and a query id), never from iteration
//! order. Samples therefore do not change when the data is resharded or
//! visited in a different order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh3::Xxh3;

/// RNG keyed by `(seed, parts...)`. Parts are length-framed.
pub fn derive_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Xxh3::new();
    h.update(&seed.to_le_bytes());
    for p in parts {
        h.update(&(p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::seed_from_u64(h.digest())
}

/// Picks `k` of `n` positions without replacement, returned ascending.
pub fn sample_positions(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut picked = rand::seq::index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_distinguishes_parts() {
        let a = sample_positions(&mut derive_rng(1, &[b"ab", b"c"]), 1000, 10);
        let b = sample_positions(&mut derive_rng(1, &[b"a", b"bc"]), 1000, 10);
        let c = sample_positions(&mut derive_rng(1, &[b"ab", b"c"]), 1000, 10);
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn sample_sizes() {
        let mut rng = derive_rng(0, &[]);
        assert_eq!(sample_positions(&mut rng, 3, 5), [0, 1, 2]);
        let s = sample_positions(&mut rng, 10, 4);
        assert_eq!(s.len(), 4);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }
}

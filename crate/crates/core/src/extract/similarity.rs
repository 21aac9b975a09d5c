//! Lexical and embedding similarity used by grounding.

use crate::text::{raw_tokens, tokenize};

/// ROUGE-L F-measure over case-folded alphanumeric tokens (stopwords kept).
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = raw_tokens(candidate);
    let r = raw_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&c, &r);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / c.len() as f64;
    let rec = lcs as f64 / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Maps text to a fixed-dimension unit vector (zero vector for empty text).
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Hashed bag-of-tokens embedding, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dim: usize,
}

pub const DEFAULT_EMBED_DIM: usize = 256;

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_EMBED_DIM }
    }
}

impl HashedEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashedEmbedder {
    fn id(&self) -> &str {
        "hashed-bow"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            v[(fnv1a(token.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn embed(text: &str, embedder: &dyn Embedder) -> Vec<f64> {
    embedder.embed(text)
}

/// `1 - cos(a, b)` for unit vectors; a zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot / (na * nb)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force LCS over all subsequences of the shorter side.
    fn lcs_oracle(a: &[&str], b: &[&str]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<&str> = a.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, t)| *t).collect();
            let mut it = b.iter();
            if sub.iter().all(|t| it.any(|u| u == t)) {
                best = best.max(sub.len());
            }
        }
        best
    }

    #[test]
    fn rouge_identity_and_hand_example() {
        assert_eq!(rouge_l("tap sound", "tap sound"), 1.0);
        assert_eq!(lcs_oracle(&["a", "b", "c", "d"], &["a", "b", "x", "d"]), 3);
        assert!((rouge_l("a b c d", "a b x d") - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l("", "tap"), 0.0);
        assert_eq!(rouge_l("", ""), 0.0);
    }

    #[test]
    fn lcs_matches_brute_force() {
        let a = ["tap", "on", "sound", "then", "tap"];
        let b = ["tap", "sound", "tap", "on", "then"];
        let a_s: Vec<String> = a.iter().map(|s| s.to_string()).collect();
        let b_s: Vec<String> = b.iter().map(|s| s.to_string()).collect();
        assert_eq!(lcs_len(&a_s, &b_s), lcs_oracle(&a, &b));
    }

    #[test]
    fn default_embedder_is_deterministic_and_unit_norm() {
        let e = HashedEmbedder::default();
        let a = embed("Tap Sound", &e);
        assert_eq!(a, embed("Tap Sound", &e));
        assert_eq!(a.len(), 256);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(embed("", &e).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn distances_on_fixture_pairs() {
        let e = HashedEmbedder::default();
        assert_eq!(cosine_distance(&embed("tap sound", &e), &embed("tap sound", &e)), 0.0);
        // disjoint token sets with no hash collision: cosine 0, distance 1
        let d = cosine_distance(&embed("tap sound", &e), &embed("zebra", &e));
        assert!(d > 0.25, "{d}");
        assert_eq!(d, 1.0);
    }
}

//! Feature extraction: hashed bag-of-tokens vectors and passthrough features.
//!
//! The hashed map replaces pretrained encoders at desk scale: each lowercase
//! whitespace token is hashed into one of `dim` buckets and the bucket counts
//! occurrences. The resulting vector is non-negative and its L2 norm is
//! bounded by the token count. Hashing uses FNV-1a so vectors are identical
//! across platforms and runs.

use crate::dataset::{Document, Query};
use crate::error::{Error, Result};

/// How raw items are turned into fixed-length feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FeatureMode {
    /// Token counts hashed into `dim` buckets.
    HashedBagOfTokens,
    /// Use the features stored on the item; they must have length `dim`.
    Passthrough,
}

/// Maps queries and documents to `dim`-length feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureMap {
    pub dim: usize,
    pub mode: FeatureMode,
}

impl FeatureMap {
    pub fn hashed(dim: usize) -> Self {
        FeatureMap {
            dim,
            mode: FeatureMode::HashedBagOfTokens,
        }
    }

    pub fn passthrough(dim: usize) -> Self {
        FeatureMap {
            dim,
            mode: FeatureMode::Passthrough,
        }
    }

    pub fn document_features(&self, doc: &Document) -> Result<Vec<f64>> {
        self.features(&doc.text, doc.features.as_deref(), &doc.doc_id)
    }

    pub fn query_features(&self, query: &Query) -> Result<Vec<f64>> {
        self.features(&query.text, query.features.as_deref(), &query.query_id)
    }

    fn features(&self, text: &str, stored: Option<&[f64]>, id: &str) -> Result<Vec<f64>> {
        match self.mode {
            FeatureMode::HashedBagOfTokens => Ok(hash_tokens(text, self.dim)),
            FeatureMode::Passthrough => {
                let stored = stored.ok_or_else(|| {
                    Error::Invalid(format!("passthrough features requested but {id:?} has none"))
                })?;
                if stored.len() != self.dim {
                    return Err(Error::Invalid(format!(
                        "stored features of {id:?} have length {}, expected {}",
                        stored.len(),
                        self.dim
                    )));
                }
                Ok(stored.to_vec())
            }
        }
    }
}

/// Lowercase whitespace tokenization; anything fancier is out of scope.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|t| t.to_lowercase())
}

/// Hash a token sequence into non-negative bucket counts.
pub fn hash_tokens(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for tok in tokenize(text) {
        let bucket = (fnv1a(tok.as_bytes()) % dim as u64) as usize;
        v[bucket] += 1.0;
    }
    v
}

/// FNV-1a 64-bit. Stable across platforms, unlike `DefaultHasher`.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Cosine similarity; zero whenever either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sparse view of a feature vector: the non-zero entries in index order.
///
/// Hashed bag-of-tokens vectors are mostly zeros (a handful of buckets out
/// of hundreds), so the training hot path iterates these instead of the
/// dense vector. Summation order matches the dense scan, so scores computed
/// through either view are bit-identical for count features.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn from_dense(x: &[f64]) -> Self {
        SparseVec {
            dim: x.len(),
            entries: x
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i as u32, *v))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashed_vectors_are_non_negative_with_bounded_norm() {
        let text = "alpha beta beta gamma delta alpha";
        let v = hash_tokens(text, 16);
        let n_tokens = 6.0;
        assert!(v.iter().all(|&x| x >= 0.0));
        let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(l2 <= n_tokens + 1e-12);
        assert_eq!(v.iter().sum::<f64>(), n_tokens);
    }

    #[test]
    fn hashing_is_case_insensitive_and_deterministic() {
        let a = hash_tokens("Apple Banana", 32);
        let b = hash_tokens("apple banana", 32);
        assert_eq!(a, b);
        assert_eq!(a, hash_tokens("Apple Banana", 32));
    }

    #[test]
    fn empty_text_hashes_to_zero_vector() {
        let v = hash_tokens("", 8);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn passthrough_rejects_missing_or_missized_features() {
        let fm = FeatureMap::passthrough(3);
        let doc = Document {
            doc_id: "d0".into(),
            text: "x".into(),
            features: None,
        };
        assert!(fm.document_features(&doc).is_err());
        let doc2 = Document {
            features: Some(vec![1.0, 2.0]),
            ..doc
        };
        assert!(fm.document_features(&doc2).is_err());
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}

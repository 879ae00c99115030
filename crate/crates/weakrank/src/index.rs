//! Exact inner-product retrieval: top-K search, hard-negative mining,
//! k-nearest-neighbor sets, and reciprocal-nearest-neighbor Jaccard
//! similarity.
//!
//! Everything is brute force over a dense embedding matrix. At desk scale
//! this is fast and removes approximate indexing as a correctness variable.
//! Ties are always broken toward the lower document index, which makes every
//! result (and everything trained on top of it) reproducible.
//!
//! Index dump byte layout (all little-endian):
//!
//! ```text
//! bytes 0..8   magic b"WRNKIDX1"
//! bytes 8..16  u64  document count N
//! bytes 16..24 u64  embedding dimension E
//! bytes 24..32 i64  build epoch
//! then per document: u32 id byte length + id bytes (UTF-8)
//! then N*E f64 embeddings, row-major
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::features::{cosine, dot, FeatureMap};
use crate::scorer::{ScorerModel, Side};

const INDEX_MAGIC: &[u8; 8] = b"WRNKIDX1";

/// Immutable dense index: one embedding row per corpus document.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    doc_ids: Vec<String>,
    dim: usize,
    rows: Vec<f64>,
    pub build_epoch: i64,
}

impl EmbeddingIndex {
    /// Embed every document under the frozen model. Joint scorers have no
    /// document-only embedding and are rejected.
    pub fn build(
        model: &ScorerModel,
        fmap: &FeatureMap,
        corpus: &Corpus,
        epoch: i64,
    ) -> Result<Self> {
        if !model.arch.has_embeddings() {
            return Err(Error::Unsupported(
                "joint scorer has no document embeddings to index".into(),
            ));
        }
        Self::from_rows(corpus, model.embed_dim, epoch, |doc| {
            model.embed_features(&fmap.document_features(doc)?, Side::Doc)
        })
    }

    /// Raw feature rows instead of model embeddings. Used for the joint
    /// scorer's fixed candidate pools and for model-independent similarity.
    pub fn from_features(fmap: &FeatureMap, corpus: &Corpus, epoch: i64) -> Result<Self> {
        Self::from_rows(corpus, fmap.dim, epoch, |doc| fmap.document_features(doc))
    }

    /// Wrap precomputed embeddings (row i belongs to corpus doc i).
    pub fn from_embeddings(
        corpus: &Corpus,
        dim: usize,
        rows: Vec<f64>,
        epoch: i64,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Invalid("cannot index an empty corpus".into()));
        }
        if rows.len() != corpus.len() * dim {
            return Err(Error::Invalid(format!(
                "{} embedding values for {} docs of dim {dim}",
                rows.len(),
                corpus.len()
            )));
        }
        Ok(EmbeddingIndex {
            doc_ids: corpus.docs().iter().map(|d| d.doc_id.clone()).collect(),
            dim,
            rows,
            build_epoch: epoch,
        })
    }

    fn from_rows(
        corpus: &Corpus,
        dim: usize,
        epoch: i64,
        embed: impl Fn(&crate::dataset::Document) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Invalid("cannot index an empty corpus".into()));
        }
        let mut rows = Vec::with_capacity(corpus.len() * dim);
        let mut doc_ids = Vec::with_capacity(corpus.len());
        for doc in corpus.docs() {
            let row = embed(doc)?;
            debug_assert_eq!(row.len(), dim);
            rows.extend_from_slice(&row);
            doc_ids.push(doc.doc_id.clone());
        }
        Ok(EmbeddingIndex {
            doc_ids,
            dim,
            rows,
            build_epoch: epoch,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn doc_id(&self, i: usize) -> &str {
        &self.doc_ids[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn scores_against(&self, query: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| dot(self.row(i), query)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.build_epoch.to_le_bytes());
        for id in &self.doc_ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let bad = |msg: &str| Error::Invalid(format!("index dump: {msg}"));
        if bytes.len() < 32 || &bytes[0..8] != INDEX_MAGIC {
            return Err(bad("bad header"));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let build_epoch = i64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let mut off = 32;
        let mut doc_ids = Vec::with_capacity(n);
        for _ in 0..n {
            if off + 4 > bytes.len() {
                return Err(bad("truncated ids"));
            }
            let len = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
            off += 4;
            if off + len > bytes.len() {
                return Err(bad("truncated ids"));
            }
            let id = std::str::from_utf8(&bytes[off..off + len])
                .map_err(|_| bad("non-utf8 id"))?
                .to_string();
            off += len;
            doc_ids.push(id);
        }
        if bytes.len() != off + n * dim * 8 {
            return Err(bad("embedding payload length mismatch"));
        }
        let rows = (0..n * dim)
            .map(|i| f64::from_le_bytes(bytes[off + 8 * i..off + 8 * i + 8].try_into().unwrap()))
            .collect();
        Ok(EmbeddingIndex {
            doc_ids,
            dim,
            rows,
            build_epoch,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopKResult {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Order candidate positions by (score desc, index asc).
fn ranked_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must be finite")
            .then(a.cmp(&b))
    });
    order
}

/// Select the `k` best positions under (score desc, index asc) without a
/// full sort; exact same result as sorting and truncating.
fn top_positions(scores: &[f64], k: usize) -> Vec<usize> {
    let n = scores.len();
    let k = k.min(n);
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .expect("scores must be finite")
            .then(a.cmp(b))
    };
    let mut order: Vec<usize> = (0..n).collect();
    if k > 0 && k < n {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    order.truncate(k);
    order
}

/// Exact top-K by inner product: equal to brute-force argsort truncated to K.
pub fn top_k(index: &EmbeddingIndex, query: &[f64], k: usize) -> TopKResult {
    let scores = index.scores_against(query);
    let indices = top_positions(&scores, k);
    let scores = indices.iter().map(|&i| scores[i]).collect();
    TopKResult { indices, scores }
}

/// The `n_neg` highest-scoring non-relevant documents, drawn from a seeded
/// sample of `sample_pool` documents (the whole corpus when the pool is at
/// least as large). Returns fewer when eligibility runs out.
pub fn mine_hard_negatives(
    index: &EmbeddingIndex,
    query: &[f64],
    relevant: &HashSet<usize>,
    n_neg: usize,
    sample_pool: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    if n_neg == 0 {
        return Vec::new();
    }
    let n = index.len();
    let pool: Vec<usize> = if sample_pool >= n {
        (0..n).collect()
    } else {
        // Partial Fisher-Yates with explicit u64 draws (platform-stable).
        let mut all: Vec<usize> = (0..n).collect();
        for i in 0..sample_pool {
            let j = i + rng.gen_range(0..(n - i) as u64) as usize;
            all.swap(i, j);
        }
        all.truncate(sample_pool);
        all
    };
    let eligible: Vec<usize> = pool.into_iter().filter(|d| !relevant.contains(d)).collect();
    let scores: Vec<f64> = eligible.iter().map(|&d| dot(index.row(d), query)).collect();
    let mut order: Vec<usize> = (0..eligible.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must be finite")
            .then(eligible[a].cmp(&eligible[b]))
    });
    order
        .into_iter()
        .take(n_neg)
        .map(|pos| eligible[pos])
        .collect()
}

/// k nearest neighbors of document `d` by inner product, self excluded.
pub fn knn(index: &EmbeddingIndex, d: usize, k: usize) -> Vec<usize> {
    let scores = index.scores_against(index.row(d));
    top_positions(&scores, (k + 1).min(index.len()))
        .into_iter()
        .filter(|&i| i != d)
        .take(k)
        .collect()
}

fn rnn_set(index: &EmbeddingIndex, d: usize, k: usize) -> Vec<usize> {
    knn(index, d, k)
        .into_iter()
        .filter(|&e| knn(index, e, k).contains(&d))
        .collect()
}

fn jaccard_of_sets(a: &[usize], b: &[usize]) -> f64 {
    let sa: HashSet<usize> = a.iter().copied().collect();
    let sb: HashSet<usize> = b.iter().copied().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Jaccard overlap of the reciprocal-nearest-neighbor sets of `i` and `j`:
/// RNN_k(d) = { e in kNN(d) : d in kNN(e) }, self excluded; 0/0 is 0.
pub fn rnn_jaccard(index: &EmbeddingIndex, i: usize, j: usize, k: usize) -> f64 {
    jaccard_of_sets(&rnn_set(index, i, k), &rnn_set(index, j, k))
}

/// Stable descending sort of candidate positions, ties to the lower index.
pub fn rerank(scores: &[f64]) -> Vec<usize> {
    ranked_order(scores)
}

/// Precomputed kNN/RNN sets for one index build, so per-candidate similarity
/// lookups during an epoch cost nothing.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    pub k: usize,
    rnn: Vec<Vec<usize>>,
}

impl NeighborTable {
    pub fn build(index: &EmbeddingIndex, k: usize) -> Self {
        let n = index.len();
        let knn_lists: Vec<Vec<usize>> = (0..n).map(|d| knn(index, d, k)).collect();
        let rnn = (0..n)
            .map(|d| {
                knn_lists[d]
                    .iter()
                    .copied()
                    .filter(|&e| knn_lists[e].contains(&d))
                    .collect()
            })
            .collect();
        NeighborTable { k, rnn }
    }

    pub fn jaccard(&self, i: usize, j: usize) -> f64 {
        jaccard_of_sets(&self.rnn[i], &self.rnn[j])
    }
}

/// Per-candidate similarity to the positive for ELS: a blend of geometric
/// (cosine mapped into [0,1]) and RNN-Jaccard similarity, `lambda` toward
/// the geometric side. The positive's own entry is 1 by convention.
pub fn els_similarities(
    index: &EmbeddingIndex,
    table: &NeighborTable,
    candidates: &[usize],
    positive_pos: usize,
    lambda: f64,
) -> Vec<f64> {
    let pos_doc = candidates[positive_pos];
    let pos_row = index.row(pos_doc);
    candidates
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if i == positive_pos {
                1.0
            } else {
                let geo = (cosine(index.row(d), pos_row) + 1.0) / 2.0;
                let jac = table.jaccard(d, pos_doc);
                (lambda * geo + (1.0 - lambda) * jac).clamp(0.0, 1.0)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::scorer::Arch;

    fn small_index(seed: u64, n_docs: usize) -> EmbeddingIndex {
        let bundle = generate_synthetic(&SyntheticSpec {
            n_docs,
            n_queries: 10,
            n_clusters: 4.min(n_docs),
            vocab_size: 60,
            seed,
        })
        .unwrap();
        let fmap = FeatureMap::hashed(32);
        let model = ScorerModel::init(Arch::SharedTower, 32, 8, 1.0, seed);
        EmbeddingIndex::build(&model, &fmap, &bundle.corpus, 0).unwrap()
    }

    #[test]
    fn joint_arch_cannot_be_indexed() {
        let bundle = generate_synthetic(&SyntheticSpec {
            n_docs: 10,
            n_queries: 5,
            n_clusters: 2,
            vocab_size: 30,
            seed: 1,
        })
        .unwrap();
        let fmap = FeatureMap::hashed(16);
        let model = ScorerModel::init(Arch::Joint, 16, 4, 1.0, 1);
        assert!(matches!(
            EmbeddingIndex::build(&model, &fmap, &bundle.corpus, 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn empty_corpus_cannot_be_indexed() {
        let corpus = Corpus::from_documents(vec![]).unwrap();
        let fmap = FeatureMap::hashed(16);
        let model = ScorerModel::init(Arch::SharedTower, 16, 4, 1.0, 1);
        assert!(EmbeddingIndex::build(&model, &fmap, &corpus, 0).is_err());
    }

    #[test]
    fn rebuild_with_same_parameters_is_identical() {
        let a = small_index(5, 20);
        let b = small_index(5, 20);
        assert_eq!(a, b);
        assert_eq!(a.build_epoch, 0);
    }

    #[test]
    fn top_k_matches_hand_case() {
        let corpus = Corpus::from_documents(
            ["a", "b", "c"]
                .iter()
                .enumerate()
                .map(|(i, t)| crate::dataset::Document {
                    doc_id: format!("d{i}"),
                    text: t.to_string(),
                    features: Some(vec![i as f64 + 1.0]),
                })
                .collect(),
        )
        .unwrap();
        let fmap = FeatureMap::passthrough(1);
        let index = EmbeddingIndex::from_features(&fmap, &corpus, 0).unwrap();
        // Query 1.0: scores (1, 2, 3).
        let r = top_k(&index, &[1.0], 2);
        assert_eq!(r.indices, vec![2, 1]);
        let full = top_k(&index, &[1.0], 10);
        assert_eq!(full.indices, vec![2, 1, 0]);
    }

    #[test]
    fn top_k_matches_brute_force_oracle() {
        let index = small_index(7, 40);
        let mut rng = crate::seeding::rng_for(7, 0x50, 0);
        use rand::Rng as _;
        for _ in 0..300 {
            let q: Vec<f64> = (0..index.dim()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let k = 1 + (rng.gen::<u64>() % 15) as usize;
            let got = top_k(&index, &q, k);
            let want = crate::oracles::brute_topk(&index.scores_against(&q), k);
            assert_eq!(got.indices, want);
            // Scores are non-increasing.
            for w in got.scores.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn top_k_prefix_consistency() {
        let index = small_index(9, 30);
        let q: Vec<f64> = (0..index.dim()).map(|i| (i as f64).sin()).collect();
        let full = top_k(&index, &q, index.len());
        for k in 1..=index.len() {
            let partial = top_k(&index, &q, k);
            assert_eq!(partial.indices, full.indices[..k]);
        }
    }

    #[test]
    fn mining_respects_up_to_semantics_and_eligibility() {
        let index = small_index(11, 5);
        let mut rng = crate::seeding::rng_for(11, 0x51, 0);
        let q: Vec<f64> = (0..index.dim()).map(|i| (i as f64).cos()).collect();
        // Only 3 eligible docs but 4 requested.
        let relevant: HashSet<usize> = [0, 1].into_iter().collect();
        let got = mine_hard_negatives(&index, &q, &relevant, 4, 1000, &mut rng);
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|d| !relevant.contains(d)));
        // Whole corpus relevant: nothing to mine.
        let all: HashSet<usize> = (0..5).collect();
        let empty = mine_hard_negatives(&index, &q, &all, 4, 1000, &mut rng);
        assert!(empty.is_empty());
    }

    #[test]
    fn full_pool_mining_matches_brute_force_scan() {
        let index = small_index(13, 50);
        let mut rng = crate::seeding::rng_for(13, 0x52, 0);
        use rand::Rng as _;
        for _ in 0..50 {
            let q: Vec<f64> = (0..index.dim()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let relevant: HashSet<usize> =
                (0..50).filter(|_| rng.gen::<f64>() < 0.1).collect();
            let got = mine_hard_negatives(&index, &q, &relevant, 5, usize::MAX, &mut rng);
            // Oracle: mask relevant scores to -inf is not allowed (finite
            // comparator), so scan eligible ranks directly.
            let scores = index.scores_against(&q);
            let order = crate::oracles::brute_topk(&scores, 50);
            let want: Vec<usize> = order
                .into_iter()
                .filter(|d| !relevant.contains(d))
                .take(5)
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn seeded_pool_sampling_is_deterministic() {
        let index = small_index(15, 40);
        let q: Vec<f64> = (0..index.dim()).map(|i| (i as f64).sin()).collect();
        let relevant: HashSet<usize> = [3].into_iter().collect();
        let mut r1 = crate::seeding::rng_for(15, 0x53, 0);
        let mut r2 = crate::seeding::rng_for(15, 0x53, 0);
        let a = mine_hard_negatives(&index, &q, &relevant, 4, 10, &mut r1);
        let b = mine_hard_negatives(&index, &q, &relevant, 4, 10, &mut r2);
        assert_eq!(a, b);
    }

    #[test]
    fn rnn_jaccard_identity_and_symmetry() {
        let index = small_index(17, 20);
        // Self-similarity is 1 whenever the RNN set is non-empty.
        let mut any_nonempty = false;
        for d in 0..20 {
            if !rnn_set(&index, d, 3).is_empty() {
                any_nonempty = true;
                assert_eq!(rnn_jaccard(&index, d, d, 3), 1.0);
            }
        }
        assert!(any_nonempty);
        for i in 0..10 {
            for j in 0..10 {
                let a = rnn_jaccard(&index, i, j, 3);
                let b = rnn_jaccard(&index, j, i, 3);
                assert_eq!(a, b);
                assert!((0.0..=1.0).contains(&a));
            }
        }
    }

    /// Exhaustive oracle on a 20-doc corpus, k=3: recompute kNN sets by full
    /// sort and RNN sets by definition, then compare every pair.
    #[test]
    fn rnn_jaccard_matches_exhaustive_oracle() {
        let index = small_index(19, 20);
        let k = 3;
        let oracle_knn: Vec<Vec<usize>> = (0..20)
            .map(|d| {
                let scores = index.scores_against(index.row(d));
                crate::oracles::brute_topk(&scores, 20)
                    .into_iter()
                    .filter(|&e| e != d)
                    .take(k)
                    .collect()
            })
            .collect();
        let oracle_rnn: Vec<Vec<usize>> = (0..20)
            .map(|d| {
                oracle_knn[d]
                    .iter()
                    .copied()
                    .filter(|&e| oracle_knn[e].contains(&d))
                    .collect()
            })
            .collect();
        for i in 0..20 {
            for j in 0..20 {
                let wanted = jaccard_of_sets(&oracle_rnn[i], &oracle_rnn[j]);
                assert_eq!(rnn_jaccard(&index, i, j, k), wanted, "pair ({i},{j})");
            }
        }
    }

    #[test]
    fn neighbor_table_agrees_with_direct_computation() {
        let index = small_index(21, 25);
        let table = NeighborTable::build(&index, 4);
        for i in 0..25 {
            for j in 0..25 {
                assert_eq!(table.jaccard(i, j), rnn_jaccard(&index, i, j, 4));
            }
        }
    }

    #[test]
    fn els_similarities_are_valid_and_anchor_positive() {
        let index = small_index(23, 20);
        let table = NeighborTable::build(&index, 4);
        let candidates = vec![3, 7, 11, 15];
        let sims = els_similarities(&index, &table, &candidates, 1, 0.5);
        assert_eq!(sims[1], 1.0);
        assert!(sims.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn rerank_examples() {
        assert_eq!(rerank(&[0.2, 0.9, 0.2]), vec![1, 0, 2]);
        assert_eq!(rerank(&[3.0, 2.0, 1.0]), vec![0, 1, 2]);
    }

    #[test]
    fn rerank_matches_oracle_on_random_vectors() {
        let mut rng = crate::seeding::rng_for(25, 0x54, 0);
        use rand::Rng as _;
        for _ in 0..200 {
            let n = 2 + (rng.gen::<u64>() % 30) as usize;
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen::<u64>() % 10) as f64).collect();
            assert_eq!(rerank(&scores), crate::oracles::brute_topk(&scores, n));
        }
    }

    #[test]
    fn index_dump_round_trips() {
        let index = small_index(27, 15);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        index.save(&path).unwrap();
        let back = EmbeddingIndex::load(&path).unwrap();
        assert_eq!(index, back);
    }
}

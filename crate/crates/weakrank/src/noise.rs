//! Semantic-aware label-noise injection.
//!
//! A controlled fraction of training queries has its annotated positive
//! swapped for the most similar non-relevant document, which is much harder
//! noise than a uniform-random swap: the corrupted label is plausible.
//! Test and validation judgments are never touched — the tables measure how
//! noisy *training* degrades clean-test quality.
//!
//! Similarity defaults to raw feature space (hashed bag-of-tokens cosine, or
//! stored features when the whole corpus ships them) so the corruption is
//! fixed per (dataset, ratio, seed) and every loss function trains against
//! identical corrupted judgments.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::dataset::{DatasetBundle, Judgments};
use crate::error::{Error, Result};
use crate::features::{cosine, FeatureMap};
use crate::scorer::{Arch, ScorerModel, Side};
use crate::seeding;

/// Feature buckets for the model-independent similarity space.
pub const SIMILARITY_FEATURE_DIM: usize = 512;
/// Embedding width of the seeded initial model used by the ablation space.
pub const INITIAL_MODEL_EMBED_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilaritySpace {
    /// Raw feature vectors; independent of any trained model (default).
    FeatureSpace,
    /// Embeddings of a freshly initialized (untrained) shared tower.
    InitialModelSpace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Fraction of training queries to corrupt.
    pub ratio: f64,
    pub seed: u64,
    pub similarity_space: SimilaritySpace,
    /// `None` scans the whole corpus and takes the single most similar
    /// eligible document. `Some(p)` instead samples uniformly from the top-p
    /// most similar eligible documents (ablation mode).
    pub pool_size: Option<usize>,
}

impl NoiseSpec {
    pub fn new(ratio: f64, seed: u64) -> Self {
        NoiseSpec {
            ratio,
            seed,
            similarity_space: SimilaritySpace::FeatureSpace,
            pool_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Config(format!(
                "noise ratio must be in [0,1], got {}",
                self.ratio
            )));
        }
        if self.pool_size == Some(0) {
            return Err(Error::Config("noise pool size must be positive".into()));
        }
        Ok(())
    }
}

/// Audit record of one corrupted pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionRecord {
    pub query_id: String,
    pub original: String,
    pub replacement: String,
    pub similarity: f64,
}

fn similarity_rows(bundle: &DatasetBundle, spec: &NoiseSpec) -> Result<Vec<Vec<f64>>> {
    let all_featured = bundle
        .corpus
        .docs()
        .iter()
        .all(|d| d.features.is_some());
    let fmap = if all_featured {
        FeatureMap::passthrough(bundle.corpus.doc(0).features.as_ref().unwrap().len())
    } else {
        FeatureMap::hashed(SIMILARITY_FEATURE_DIM)
    };
    match spec.similarity_space {
        SimilaritySpace::FeatureSpace => bundle
            .corpus
            .docs()
            .iter()
            .map(|d| fmap.document_features(d))
            .collect(),
        SimilaritySpace::InitialModelSpace => {
            let model = ScorerModel::init(
                Arch::SharedTower,
                fmap.dim,
                INITIAL_MODEL_EMBED_DIM,
                1.0,
                spec.seed,
            );
            bundle
                .corpus
                .docs()
                .iter()
                .map(|d| model.embed_features(&fmap.document_features(d)?, Side::Doc))
                .collect()
        }
    }
}

/// Corrupt exactly `round(ratio * |train queries|)` training judgments.
///
/// Per selected query the lowest-id positive is replaced; eligibility
/// excludes every originally relevant document. With the default full scan
/// the replacement attains the maximum similarity among eligible documents,
/// ties broken toward the lower corpus index.
pub fn inject_noise(
    bundle: &DatasetBundle,
    spec: &NoiseSpec,
) -> Result<(Judgments, Vec<CorruptionRecord>)> {
    spec.validate()?;
    if bundle.corpus.len() < 2 {
        return Err(Error::Invalid(
            "noise injection needs a corpus with >= 2 documents".into(),
        ));
    }
    let train = &bundle.train.judgments;
    let query_ids: Vec<&str> = train.iter().map(|(q, _)| q).collect();
    let n_corrupt = (spec.ratio * query_ids.len() as f64).round() as usize;

    let mut corrupted = train.clone();
    if n_corrupt == 0 {
        return Ok((corrupted, Vec::new()));
    }

    // Seeded selection without replacement, then processed in query order.
    let mut order: Vec<usize> = (0..query_ids.len()).collect();
    let mut rng = seeding::rng_for(spec.seed, 0x60, 0);
    seeding::shuffle(&mut order, &mut rng);
    let mut selected: Vec<usize> = order.into_iter().take(n_corrupt).collect();
    selected.sort_unstable();

    let rows = similarity_rows(bundle, spec)?;
    let mut records = Vec::with_capacity(n_corrupt);
    for (pick, &qpos) in selected.iter().enumerate() {
        let query_id = query_ids[qpos];
        let relevant = train.relevant(query_id).expect("train query has judgments");
        let original_id = relevant.iter().next().expect("non-empty relevant set");
        let original = bundle
            .corpus
            .index_of(original_id)
            .expect("bundle invariant: judged docs exist");
        let relevant_idx: Vec<usize> = relevant
            .iter()
            .map(|d| bundle.corpus.index_of(d).unwrap())
            .collect();

        // Rank every eligible document by similarity to the original.
        let mut eligible: Vec<(usize, f64)> = (0..bundle.corpus.len())
            .filter(|d| !relevant_idx.contains(d))
            .map(|d| (d, cosine(&rows[d], &rows[original])))
            .collect();
        if eligible.is_empty() {
            return Err(Error::Invalid(format!(
                "query {query_id:?}: no non-relevant document available as replacement"
            )));
        }
        eligible.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("similarities are finite")
                .then(a.0.cmp(&b.0))
        });
        let (replacement, similarity) = match spec.pool_size {
            None => eligible[0],
            Some(p) => {
                let pool = &eligible[..p.min(eligible.len())];
                let mut prng = seeding::rng_for(spec.seed, 0x61, pick as u64);
                pool[prng.gen_range(0..pool.len() as u64) as usize]
            }
        };
        let replacement_id = bundle.corpus.doc(replacement).doc_id.clone();
        corrupted.replace_pair(query_id, original_id, &replacement_id);
        records.push(CorruptionRecord {
            query_id: query_id.to_string(),
            original: original_id.clone(),
            replacement: replacement_id,
            similarity,
        });
    }
    Ok((corrupted, records))
}

/// Bundle with corrupted training judgments; validation/test untouched.
pub fn corrupted_bundle(
    bundle: &DatasetBundle,
    spec: &NoiseSpec,
) -> Result<(DatasetBundle, Vec<CorruptionRecord>)> {
    let (judgments, records) = inject_noise(bundle, spec)?;
    let mut out = bundle.clone();
    out.train.judgments = judgments;
    Ok((out, records))
}

/// Sidecar audit file: `query_id<TAB>orig<TAB>replacement<TAB>similarity`.
pub fn write_audit(records: &[CorruptionRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.query_id, r.original, r.replacement, r.similarity
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Qrels in the input TSV format, rows in (query, doc) order.
pub fn write_qrels(judgments: &Judgments, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (q, docs) in judgments.iter() {
        for d in docs {
            writeln!(out, "{q}\t{d}").unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::features::hash_tokens;

    fn bundle() -> DatasetBundle {
        generate_synthetic(&SyntheticSpec {
            n_docs: 120,
            n_queries: 50,
            n_clusters: 6,
            vocab_size: 300,
            seed: 42,
        })
        .unwrap()
    }

    #[test]
    fn zero_ratio_changes_nothing() {
        let b = bundle();
        let (judgments, records) = inject_noise(&b, &NoiseSpec::new(0.0, 1)).unwrap();
        assert_eq!(judgments, b.train.judgments);
        assert!(records.is_empty());
    }

    #[test]
    fn corruption_count_is_exact_round() {
        let b = bundle();
        let n = b.train.judgments.len();
        for ratio in [0.1, 0.2, 0.25, 0.5, 1.0] {
            let (_, records) = inject_noise(&b, &NoiseSpec::new(ratio, 3)).unwrap();
            assert_eq!(records.len(), (ratio * n as f64).round() as usize, "ratio {ratio}");
        }
    }

    #[test]
    fn replacements_attain_brute_force_max_similarity() {
        let b = bundle();
        let (_, records) = inject_noise(&b, &NoiseSpec::new(0.3, 7)).unwrap();
        for rec in &records {
            let orig = b.corpus.index_of(&rec.original).unwrap();
            let relevant = b.train.judgments.relevant(&rec.query_id).unwrap();
            let ox = hash_tokens(&b.corpus.doc(orig).text, SIMILARITY_FEATURE_DIM);
            let mut best = f64::NEG_INFINITY;
            for d in 0..b.corpus.len() {
                if relevant.contains(b.corpus.doc(d).doc_id.as_str()) {
                    continue;
                }
                let s = cosine(&hash_tokens(&b.corpus.doc(d).text, SIMILARITY_FEATURE_DIM), &ox);
                if s > best {
                    best = s;
                }
            }
            assert_eq!(rec.similarity, best, "query {}", rec.query_id);
            assert_ne!(rec.replacement, rec.original);
            assert!(!relevant.contains(rec.replacement.as_str()));
        }
    }

    #[test]
    fn evaluation_splits_are_untouched() {
        let b = bundle();
        let (corrupted, _) = corrupted_bundle(&b, &NoiseSpec::new(0.5, 9)).unwrap();
        assert_eq!(corrupted.test.judgments, b.test.judgments);
        assert_eq!(corrupted.validation.judgments, b.validation.judgments);
        assert_ne!(corrupted.train.judgments, b.train.judgments);
    }

    #[test]
    fn identical_spec_is_deterministic() {
        let b = bundle();
        let spec = NoiseSpec::new(0.4, 11);
        let (j1, r1) = inject_noise(&b, &spec).unwrap();
        let (j2, r2) = inject_noise(&b, &spec).unwrap();
        assert_eq!(j1, j2);
        assert_eq!(r1, r2);
        let (j3, _) = inject_noise(&b, &NoiseSpec::new(0.4, 12)).unwrap();
        assert_ne!(j1, j3);
    }

    #[test]
    fn ratio_above_one_is_rejected() {
        assert!(inject_noise(&bundle(), &NoiseSpec::new(1.1, 1)).is_err());
    }

    #[test]
    fn pool_sampling_picks_within_top_pool() {
        let b = bundle();
        let spec = NoiseSpec {
            pool_size: Some(5),
            ..NoiseSpec::new(0.2, 5)
        };
        let (_, records) = inject_noise(&b, &spec).unwrap();
        for rec in &records {
            let orig = b.corpus.index_of(&rec.original).unwrap();
            let relevant = b.train.judgments.relevant(&rec.query_id).unwrap();
            let ox = hash_tokens(&b.corpus.doc(orig).text, SIMILARITY_FEATURE_DIM);
            let mut sims: Vec<f64> = (0..b.corpus.len())
                .filter(|&d| !relevant.contains(b.corpus.doc(d).doc_id.as_str()))
                .map(|d| cosine(&hash_tokens(&b.corpus.doc(d).text, SIMILARITY_FEATURE_DIM), &ox))
                .collect();
            sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let cutoff = sims[4.min(sims.len() - 1)];
            assert!(rec.similarity >= cutoff, "query {}", rec.query_id);
        }
    }

    #[test]
    fn initial_model_space_also_works() {
        let b = bundle();
        let spec = NoiseSpec {
            similarity_space: SimilaritySpace::InitialModelSpace,
            ..NoiseSpec::new(0.2, 21)
        };
        let (_, records) = inject_noise(&b, &spec).unwrap();
        assert_eq!(records.len(), (0.2 * b.train.judgments.len() as f64).round() as usize);
    }

    #[test]
    fn audit_file_format() {
        let records = vec![CorruptionRecord {
            query_id: "q1".into(),
            original: "d1".into(),
            replacement: "d2".into(),
            similarity: 0.75,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.tsv");
        write_audit(&records, &path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert_eq!(content, "q1\td1\td2\t0.75\n");
    }
}

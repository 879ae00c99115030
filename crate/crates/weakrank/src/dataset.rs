//! Corpora, query sets, relevance judgments, and a seeded synthetic generator.
//!
//! File formats:
//! - corpus TSV: `doc_id<TAB>text` per line, UTF-8
//! - corpus JSONL: one object per line, keys `doc_id`, `text`, optional
//!   `features` (array of numbers)
//! - queries TSV: `query_id<TAB>text` (JSONL also accepted, keys `query_id`,
//!   `text`, optional `features`)
//! - qrels TSV: `query_id<TAB>doc_id`, one line per relevant pair
//!
//! Loaded bundles are immutable; all operations here are pure given their
//! inputs, so bundles are safe for concurrent reads.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    pub features: Option<Vec<f64>>,
}

/// Binary relevance: query id -> set of relevant doc ids.
///
/// Backed by ordered maps so iteration (and therefore everything derived
/// from it) is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Judgments {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl Judgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str) {
        self.map
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string());
    }

    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.map.get(query_id)
    }

    /// The positive used for training when a query has several: lowest id.
    pub fn annotated_positive(&self, query_id: &str) -> Option<&str> {
        self.map
            .get(query_id)
            .and_then(|s| s.iter().next())
            .map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.map.iter().map(|(q, s)| (q.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn replace_pair(&mut self, query_id: &str, old_doc: &str, new_doc: &str) {
        if let Some(set) = self.map.get_mut(query_id) {
            set.remove(old_doc);
            set.insert(new_doc.to_string());
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if d.text.trim().is_empty() && d.features.is_none() {
                return Err(Error::Invalid(format!(
                    "document {:?} has neither text nor features",
                    d.doc_id
                )));
            }
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate doc_id {:?}", d.doc_id)));
            }
        }
        Ok(Corpus { docs, by_id })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc(&self, index: usize) -> &Document {
        &self.docs[index]
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn index_of(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuerySet {
    queries: Vec<Query>,
}

impl QuerySet {
    pub fn from_queries(queries: Vec<Query>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(queries.len());
        for q in &queries {
            if !seen.insert(q.query_id.clone()) {
                return Err(Error::Invalid(format!(
                    "duplicate query_id {:?}",
                    q.query_id
                )));
            }
        }
        Ok(QuerySet { queries })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }
}

/// One split: its queries plus their judgments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub queries: QuerySet,
    pub judgments: Judgments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub corpus: Corpus,
    pub train: Split,
    pub validation: Split,
    pub test: Split,
}

impl DatasetBundle {
    fn check_invariants(&self) -> Result<()> {
        if self.train.judgments.is_empty() {
            return Err(Error::Invalid("no training queries".into()));
        }
        let mut seen: HashSet<&str> = HashSet::new();
        for split in [&self.train, &self.validation, &self.test] {
            for q in split.queries.queries() {
                if !seen.insert(&q.query_id) {
                    return Err(Error::Invalid(format!(
                        "query_id {:?} appears in more than one split",
                        q.query_id
                    )));
                }
            }
        }
        for split in [&self.train, &self.validation, &self.test] {
            let ids: HashSet<&str> = split
                .queries
                .queries()
                .iter()
                .map(|q| q.query_id.as_str())
                .collect();
            for (qid, docs) in split.judgments.iter() {
                if !ids.contains(qid) {
                    return Err(Error::DanglingQuery {
                        query_id: qid.to_string(),
                    });
                }
                for d in docs {
                    if self.corpus.index_of(d).is_none() {
                        return Err(Error::DanglingDoc { doc_id: d.clone() });
                    }
                }
            }
            for q in split.queries.queries() {
                match split.judgments.relevant(&q.query_id) {
                    Some(s) if !s.is_empty() => {}
                    _ => {
                        return Err(Error::Invalid(format!(
                            "query {:?} has no relevant documents",
                            q.query_id
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Tsv,
    Jsonl,
}

impl std::str::FromStr for FileFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(FileFormat::Tsv),
            "jsonl" => Ok(FileFormat::Jsonl),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPaths {
    pub queries: PathBuf,
    pub qrels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundlePaths {
    pub corpus: PathBuf,
    pub train: SplitPaths,
    pub validation: Option<SplitPaths>,
    pub test: Option<SplitPaths>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(serde::Deserialize)]
struct JsonDoc {
    doc_id: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    features: Option<Vec<f64>>,
}

#[derive(serde::Deserialize)]
struct JsonQuery {
    query_id: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    features: Option<Vec<f64>>,
}

pub fn load_corpus(path: &Path, format: FileFormat) -> Result<Corpus> {
    let mut docs = Vec::new();
    for (lineno, line) in read_lines(path)?.into_iter().enumerate() {
        let n = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        match format {
            FileFormat::Tsv => {
                let (id, text) = line.split_once('\t').ok_or_else(|| {
                    Error::parse(path.display().to_string(), n, "expected doc_id<TAB>text")
                })?;
                docs.push(Document {
                    doc_id: id.to_string(),
                    text: text.to_string(),
                    features: None,
                });
            }
            FileFormat::Jsonl => {
                let d: JsonDoc = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(path.display().to_string(), n, e.to_string()))?;
                docs.push(Document {
                    doc_id: d.doc_id,
                    text: d.text,
                    features: d.features,
                });
            }
        }
    }
    Corpus::from_documents(docs)
}

pub fn load_queries(path: &Path, format: FileFormat) -> Result<QuerySet> {
    let mut queries = Vec::new();
    for (lineno, line) in read_lines(path)?.into_iter().enumerate() {
        let n = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        match format {
            FileFormat::Tsv => {
                let (id, text) = line.split_once('\t').ok_or_else(|| {
                    Error::parse(path.display().to_string(), n, "expected query_id<TAB>text")
                })?;
                queries.push(Query {
                    query_id: id.to_string(),
                    text: text.to_string(),
                    features: None,
                });
            }
            FileFormat::Jsonl => {
                let q: JsonQuery = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(path.display().to_string(), n, e.to_string()))?;
                queries.push(Query {
                    query_id: q.query_id,
                    text: q.text,
                    features: q.features,
                });
            }
        }
    }
    QuerySet::from_queries(queries)
}

pub fn load_qrels(path: &Path) -> Result<Judgments> {
    let mut judgments = Judgments::new();
    for (lineno, line) in read_lines(path)?.into_iter().enumerate() {
        let n = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (qid, did) = line.split_once('\t').ok_or_else(|| {
            Error::parse(
                path.display().to_string(),
                n,
                "expected query_id<TAB>doc_id",
            )
        })?;
        if qid.is_empty() || did.is_empty() {
            return Err(Error::parse(
                path.display().to_string(),
                n,
                "empty id field",
            ));
        }
        judgments.insert(qid, did);
    }
    Ok(judgments)
}

/// Load a bundle from disk. Ids are the identity: load order never affects
/// content. Dangling ids and malformed lines are hard errors.
pub fn load_bundle(name: &str, paths: &BundlePaths, format: FileFormat) -> Result<DatasetBundle> {
    let corpus = load_corpus(&paths.corpus, format)?;
    let load_split = |sp: &SplitPaths| -> Result<Split> {
        Ok(Split {
            queries: load_queries(&sp.queries, format)?,
            judgments: load_qrels(&sp.qrels)?,
        })
    };
    let train = load_split(&paths.train)?;
    let validation = paths
        .validation
        .as_ref()
        .map(&load_split)
        .transpose()?
        .unwrap_or_default();
    let test = paths
        .test
        .as_ref()
        .map(&load_split)
        .transpose()?
        .unwrap_or_default();
    let bundle = DatasetBundle {
        name: name.to_string(),
        corpus,
        train,
        validation,
        test,
    };
    bundle.check_invariants()?;
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// Saving
// ---------------------------------------------------------------------------

fn tsv_safe(kind: &str, id: &str, text: &str) -> Result<()> {
    if text.contains('\t') || text.contains('\n') {
        return Err(Error::Invalid(format!(
            "{kind} {id:?} contains a tab or newline and cannot be written as TSV"
        )));
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write a bundle as TSV files: `corpus.tsv`, per-split
/// `queries_<split>.tsv` / `qrels_<split>.tsv`, plus combined `queries.tsv`
/// and `qrels.tsv` covering all splits.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut corpus = String::new();
    for d in bundle.corpus.docs() {
        tsv_safe("document", &d.doc_id, &d.text)?;
        writeln!(corpus, "{}\t{}", d.doc_id, d.text).unwrap();
    }
    write_file(&dir.join("corpus.tsv"), &corpus)?;

    let mut all_queries = String::new();
    let mut all_qrels = String::new();
    for (split_name, split) in [
        ("train", &bundle.train),
        ("validation", &bundle.validation),
        ("test", &bundle.test),
    ] {
        let mut queries = String::new();
        for q in split.queries.queries() {
            tsv_safe("query", &q.query_id, &q.text)?;
            writeln!(queries, "{}\t{}", q.query_id, q.text).unwrap();
        }
        let mut qrels = String::new();
        for (qid, docs) in split.judgments.iter() {
            for d in docs {
                writeln!(qrels, "{qid}\t{d}").unwrap();
            }
        }
        all_queries.push_str(&queries);
        all_qrels.push_str(&qrels);
        write_file(&dir.join(format!("queries_{split_name}.tsv")), &queries)?;
        write_file(&dir.join(format!("qrels_{split_name}.tsv")), &qrels)?;
    }
    write_file(&dir.join("queries.tsv"), &all_queries)?;
    write_file(&dir.join("qrels.tsv"), &all_qrels)?;
    Ok(())
}

/// Paths produced by [`save_bundle`] in `dir`, for reloading.
pub fn saved_bundle_paths(dir: &Path) -> BundlePaths {
    let sp = |name: &str| SplitPaths {
        queries: dir.join(format!("queries_{name}.tsv")),
        qrels: dir.join(format!("qrels_{name}.tsv")),
    };
    BundlePaths {
        corpus: dir.join("corpus.tsv"),
        train: sp("train"),
        validation: Some(sp("validation")),
        test: Some(sp("test")),
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Parameters for the seeded synthetic generator.
///
/// Documents are token bags drawn from cluster-specific token distributions;
/// each query is a noisy paraphrase of one document from its cluster, with
/// that document as its single relevant target. Cluster structure gives the
/// corpus "semantically similar" neighbors, which the noise module needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub n_queries: usize,
    pub n_clusters: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

const DOC_LEN_MIN: u64 = 20;
const DOC_LEN_MAX: u64 = 40;
const QUERY_LEN_MIN: u64 = 8;
const QUERY_LEN_MAX: u64 = 14;
/// Probability that a document token comes from its own cluster block.
const IN_CLUSTER_PROB: f64 = 0.90;
/// Probability that a document token is one of its own identity tokens
/// (name-like tokens from a reserved vocabulary range; the remaining mass
/// spills over the whole vocabulary).
const IDENTITY_PROB: f64 = 0.08;
/// Identity tokens per document.
const IDENTITY_TOKENS: usize = 2;
/// Fraction of the vocabulary reserved for identity tokens.
const IDENTITY_VOCAB_FRACTION: usize = 5;
/// Probability that a query token is copied from its target document
/// (otherwise it drifts to a random token of the cluster block).
const COPY_PROB: f64 = 0.9;

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    if spec.n_docs == 0 || spec.n_queries == 0 || spec.n_clusters == 0 || spec.vocab_size == 0 {
        return Err(Error::Invalid(
            "synthetic spec sizes must all be positive".into(),
        ));
    }
    if spec.n_clusters > spec.n_docs {
        return Err(Error::Invalid(format!(
            "n_clusters ({}) exceeds n_docs ({})",
            spec.n_clusters, spec.n_docs
        )));
    }
    if spec.n_clusters > spec.vocab_size {
        return Err(Error::Invalid(format!(
            "n_clusters ({}) exceeds vocab_size ({})",
            spec.n_clusters, spec.vocab_size
        )));
    }

    let vocab: Vec<String> = (0..spec.vocab_size).map(|i| format!("w{i}")).collect();
    // The tail of the vocabulary is reserved for name-like identity tokens;
    // cluster topic blocks partition the rest.
    let identity_range = (spec.vocab_size / IDENTITY_VOCAB_FRACTION)
        .min(spec.vocab_size.saturating_sub(spec.n_clusters));
    let shared = spec.vocab_size - identity_range;
    let block = shared / spec.n_clusters;

    // Documents: round-robin cluster assignment keeps clusters balanced.
    let mut rng = seeding::rng_for(spec.seed, 0x1, 0);
    let mut docs = Vec::with_capacity(spec.n_docs);
    let mut doc_tokens: Vec<Vec<usize>> = Vec::with_capacity(spec.n_docs);
    for i in 0..spec.n_docs {
        let cluster = i % spec.n_clusters;
        let lo = cluster * block;
        let hi = if cluster + 1 == spec.n_clusters {
            shared
        } else {
            lo + block
        };
        let identity: Vec<usize> = (0..IDENTITY_TOKENS)
            .map(|_| {
                if identity_range > 0 {
                    shared + rng.gen_range(0..identity_range as u64) as usize
                } else {
                    lo + rng.gen_range(0..(hi - lo) as u64) as usize
                }
            })
            .collect();
        let len = rng.gen_range(DOC_LEN_MIN..=DOC_LEN_MAX) as usize;
        let mut toks = Vec::with_capacity(len);
        for _ in 0..len {
            let r = rng.gen::<f64>();
            let t = if r < IN_CLUSTER_PROB {
                lo + rng.gen_range(0..(hi - lo) as u64) as usize
            } else if r < IN_CLUSTER_PROB + IDENTITY_PROB {
                identity[rng.gen_range(0..identity.len() as u64) as usize]
            } else {
                rng.gen_range(0..spec.vocab_size as u64) as usize
            };
            toks.push(t);
        }
        let text = toks
            .iter()
            .map(|&t| vocab[t].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        docs.push(Document {
            doc_id: format!("D{i:05}"),
            text,
            features: None,
        });
        doc_tokens.push(toks);
    }

    // Queries: noisy paraphrases of a target document. Targets concentrate
    // on a shared pool (half the query count) so train and test queries ask
    // for the same documents, the way real query logs re-hit popular docs;
    // the rest of the corpus acts as distractors.
    let mut prng = seeding::rng_for(spec.seed, 0x4, 0);
    let n_targets = spec.n_docs.min((spec.n_queries / 2).max(1));
    let mut pool: Vec<usize> = (0..spec.n_docs).collect();
    seeding::shuffle(&mut pool, &mut prng);
    pool.truncate(n_targets);

    let mut qrng = seeding::rng_for(spec.seed, 0x2, 0);
    let mut queries = Vec::with_capacity(spec.n_queries);
    let mut targets = Vec::with_capacity(spec.n_queries);
    for i in 0..spec.n_queries {
        let target = pool[qrng.gen_range(0..pool.len() as u64) as usize];
        let cluster = target % spec.n_clusters;
        let lo = cluster * block;
        let hi = if cluster + 1 == spec.n_clusters {
            shared
        } else {
            lo + block
        };
        let len = qrng.gen_range(QUERY_LEN_MIN..=QUERY_LEN_MAX) as usize;
        let src = &doc_tokens[target];
        let mut toks = Vec::with_capacity(len);
        for _ in 0..len {
            let t = if qrng.gen::<f64>() < COPY_PROB {
                src[qrng.gen_range(0..src.len() as u64) as usize]
            } else {
                lo + qrng.gen_range(0..(hi - lo) as u64) as usize
            };
            toks.push(t);
        }
        let text = toks
            .iter()
            .map(|&t| vocab[t].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        queries.push(Query {
            query_id: format!("Q{i:05}"),
            text,
            features: None,
        });
        targets.push(target);
    }

    // 80/10/10 split by query, seeded shuffle.
    let mut order: Vec<usize> = (0..spec.n_queries).collect();
    let mut srng = seeding::rng_for(spec.seed, 0x3, 0);
    seeding::shuffle(&mut order, &mut srng);
    let n_test = spec.n_queries / 10;
    let n_val = spec.n_queries / 10;
    let n_train = spec.n_queries - n_val - n_test;

    let mut assignment = vec![0usize; spec.n_queries];
    for (pos, &qi) in order.iter().enumerate() {
        assignment[qi] = if pos < n_train {
            0
        } else if pos < n_train + n_val {
            1
        } else {
            2
        };
    }
    let mut split_queries: [Vec<Query>; 3] = Default::default();
    let mut split_judgments: [Judgments; 3] = Default::default();
    // Query order by id inside each split, independent of shuffle order.
    for (qi, q) in queries.iter().enumerate() {
        let s = assignment[qi];
        split_judgments[s].insert(&q.query_id, &docs[targets[qi]].doc_id);
        split_queries[s].push(q.clone());
    }
    let mut splits = split_queries
        .into_iter()
        .zip(split_judgments)
        .map(|(qs, judgments)| {
            Ok(Split {
                queries: QuerySet::from_queries(qs)?,
                judgments,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let test = splits.pop().unwrap();
    let validation = splits.pop().unwrap();
    let train = splits.pop().unwrap();

    let bundle = DatasetBundle {
        name: format!(
            "synthetic_d{}_q{}_c{}_v{}_s{}",
            spec.n_docs, spec.n_queries, spec.n_clusters, spec.vocab_size, spec.seed
        ),
        corpus: Corpus::from_documents(docs)?,
        train,
        validation,
        test,
    };
    bundle.check_invariants()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        p
    }

    fn tiny_paths(dir: &Path) -> BundlePaths {
        let corpus = write_tmp(dir, "corpus.tsv", "d1\tred apples\nd2\tgreen pears\nd3\tblue sky\n");
        let queries = write_tmp(dir, "queries.tsv", "q1\tapples\nq2\tsky\n");
        let qrels = write_tmp(dir, "qrels.tsv", "q1\td1\nq2\td3\n");
        BundlePaths {
            corpus,
            train: SplitPaths { queries, qrels },
            validation: None,
            test: None,
        }
    }

    #[test]
    fn loads_tiny_tsv_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = load_bundle("tiny", &tiny_paths(dir.path()), FileFormat::Tsv).unwrap();
        assert_eq!(bundle.corpus.len(), 3);
        assert_eq!(bundle.train.queries.len(), 2);
        assert_eq!(
            bundle.train.judgments.relevant("q1").unwrap().len(),
            1
        );
    }

    #[test]
    fn dangling_doc_id_is_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = tiny_paths(dir.path());
        paths.train.qrels = write_tmp(dir.path(), "bad_qrels.tsv", "q1\td99\nq2\td3\n");
        let err = load_bundle("tiny", &paths, FileFormat::Tsv).unwrap_err();
        match err {
            Error::DanglingDoc { doc_id } => assert_eq!(doc_id, "d99"),
            other => panic!("expected DanglingDoc, got {other:?}"),
        }
    }

    #[test]
    fn empty_qrels_means_no_training_queries() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = tiny_paths(dir.path());
        paths.train.qrels = write_tmp(dir.path(), "empty_qrels.tsv", "");
        let err = load_bundle("tiny", &paths, FileFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains("no training queries"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = tiny_paths(dir.path());
        paths.corpus = write_tmp(dir.path(), "bad_corpus.tsv", "d1\tok\nno-tab-here\n");
        let err = load_bundle("tiny", &paths, FileFormat::Tsv).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_corpus_with_features_loads() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = write_tmp(
            dir.path(),
            "corpus.jsonl",
            "{\"doc_id\":\"d1\",\"text\":\"\",\"features\":[1.0,2.0]}\n{\"doc_id\":\"d2\",\"text\":\"hi\"}\n",
        );
        let c = load_corpus(&corpus, FileFormat::Jsonl).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.doc(0).features.as_deref(), Some(&[1.0, 2.0][..]));
    }

    #[test]
    fn synthetic_same_seed_is_bit_identical() {
        let spec = SyntheticSpec {
            n_docs: 200,
            n_queries: 50,
            n_clusters: 10,
            vocab_size: 500,
            seed: 7,
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_rejects_zero_sizes() {
        let spec = SyntheticSpec {
            n_docs: 10,
            n_queries: 0,
            n_clusters: 2,
            vocab_size: 50,
            seed: 1,
        };
        assert!(generate_synthetic(&spec).is_err());
        assert!(generate_synthetic(&SyntheticSpec {
            n_queries: 5,
            n_clusters: 20,
            ..spec
        })
        .is_err());
    }

    #[test]
    fn synthetic_split_sizes_are_80_10_10() {
        let spec = SyntheticSpec {
            n_docs: 100,
            n_queries: 40,
            n_clusters: 5,
            vocab_size: 200,
            seed: 3,
        };
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(b.train.queries.len(), 32);
        assert_eq!(b.validation.queries.len(), 4);
        assert_eq!(b.test.queries.len(), 4);
    }

    /// With a single cluster every document shares one token distribution,
    /// so a random scorer's recall@K is just K/n_docs. Monte-Carlo estimate
    /// with 1000 trials of seeded random rankings.
    #[test]
    fn single_cluster_random_scorer_recall_matches_chance() {
        let spec = SyntheticSpec {
            n_docs: 200,
            n_queries: 50,
            n_clusters: 1,
            vocab_size: 500,
            seed: 11,
        };
        let bundle = generate_synthetic(&spec).unwrap();
        let n = bundle.corpus.len();
        let k = 10;
        let queries = bundle.train.queries.queries();
        let mut rng = seeding::rng_for(99, 0xAB, 0);
        let mut hits = 0u32;
        for trial in 0..1000 {
            let q = &queries[trial % queries.len()];
            let target = bundle.train.judgments.annotated_positive(&q.query_id).unwrap();
            let target_idx = bundle.corpus.index_of(target).unwrap();
            // Random scorer: a random permutation of the corpus.
            let mut perm: Vec<usize> = (0..n).collect();
            seeding::shuffle(&mut perm, &mut rng);
            if perm[..k].contains(&target_idx) {
                hits += 1;
            }
        }
        let est = hits as f64 / 1000.0;
        let expected = k as f64 / n as f64;
        assert!(
            (est - expected).abs() <= 0.022,
            "estimate {est} vs chance {expected}"
        );
    }

    #[test]
    fn save_then_load_round_trips() {
        let spec = SyntheticSpec {
            n_docs: 60,
            n_queries: 30,
            n_clusters: 4,
            vocab_size: 120,
            seed: 5,
        };
        let bundle = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&bundle, dir.path()).unwrap();
        let reloaded = load_bundle(
            &bundle.name,
            &saved_bundle_paths(dir.path()),
            FileFormat::Tsv,
        )
        .unwrap();
        assert_eq!(bundle.corpus, reloaded.corpus);
        assert_eq!(bundle.train, reloaded.train);
        assert_eq!(bundle.validation, reloaded.validation);
        assert_eq!(bundle.test, reloaded.test);
    }

    #[test]
    fn save_twice_is_byte_identical() {
        let spec = SyntheticSpec {
            n_docs: 30,
            n_queries: 12,
            n_clusters: 3,
            vocab_size: 90,
            seed: 2,
        };
        let bundle = generate_synthetic(&spec).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_bundle(&bundle, d1.path()).unwrap();
        save_bundle(&bundle, d2.path()).unwrap();
        for f in ["corpus.tsv", "queries.tsv", "qrels.tsv"] {
            let a = fs::read(d1.path().join(f)).unwrap();
            let b = fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs");
        }
    }
}

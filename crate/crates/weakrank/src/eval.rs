//! Ranking metrics against clean judgments, plus run aggregation.
//!
//! Recall@K is the fraction of queries with at least one relevant document
//! in the top K; MRR is the mean reciprocal rank of the first relevant
//! document within the cutoff (0 when absent). Both are set-semantic over
//! queries: permuting the query list never changes the value.
//!
//! Bi-encoders are evaluated by retrieving from the full corpus through the
//! index; the joint scorer re-ranks a fixed feature-space top-100 pool,
//! mirroring the two-stage retrieval/re-ranking framing.

use std::collections::BTreeSet;
use std::path::Path;

use crate::dataset::{Corpus, Split};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::index::{self, EmbeddingIndex};
use crate::scorer::ScorerModel;

/// Pre-retrieval pool size for re-ranking evaluation of the joint scorer.
pub const RERANK_POOL: usize = 100;

/// One evaluated query: its ranked list (duplicate-free) and the clean
/// relevant set.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query_id: String,
    pub ranked: Vec<String>,
    pub relevant: BTreeSet<String>,
}

impl QueryResult {
    pub fn new(query_id: impl Into<String>, ranked: Vec<String>, relevant: BTreeSet<String>) -> Result<Self> {
        let unique: BTreeSet<&String> = ranked.iter().collect();
        if unique.len() != ranked.len() {
            return Err(Error::Invalid("ranked list contains duplicates".into()));
        }
        Ok(QueryResult {
            query_id: query_id.into(),
            ranked,
            relevant,
        })
    }
}

/// Fraction of queries whose top-K contains at least one relevant document.
pub fn recall_at_k(results: &[QueryResult], k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Invalid("recall over an empty result list".into()));
    }
    let hits = results
        .iter()
        .filter(|r| {
            r.ranked
                .iter()
                .take(k)
                .any(|d| r.relevant.contains(d))
        })
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// Mean over queries of 1/rank of the first relevant document within the
/// top `k_cap`, 0 when absent.
pub fn mrr(results: &[QueryResult], k_cap: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Invalid("mrr over an empty result list".into()));
    }
    let total: f64 = results
        .iter()
        .map(|r| {
            r.ranked
                .iter()
                .take(k_cap)
                .position(|d| r.relevant.contains(d))
                .map(|pos| 1.0 / (pos + 1) as f64)
                .unwrap_or(0.0)
        })
        .sum();
    Ok(total / results.len() as f64)
}

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SplitEval {
    pub results: Vec<QueryResult>,
    pub recall: f64,
    pub mrr: f64,
    pub k_eval: usize,
}

/// Rank a split's queries under the model and score against its (clean)
/// judgments at cutoff `k`.
pub fn evaluate_split(
    model: &ScorerModel,
    fmap: &FeatureMap,
    corpus: &Corpus,
    split: &Split,
    k: usize,
) -> Result<SplitEval> {
    if split.queries.is_empty() {
        return Err(Error::Invalid("evaluation split has no queries".into()));
    }
    let mut results = Vec::with_capacity(split.queries.len());
    if model.arch.has_embeddings() {
        let idx = EmbeddingIndex::build(model, fmap, corpus, -1)?;
        for q in split.queries.queries() {
            let qe = model.embed_features(&fmap.query_features(q)?, crate::scorer::Side::Query)?;
            let top = index::top_k(&idx, &qe, k);
            let ranked = top
                .indices
                .iter()
                .map(|&i| corpus.doc(i).doc_id.clone())
                .collect();
            results.push(QueryResult::new(
                q.query_id.clone(),
                ranked,
                split
                    .judgments
                    .relevant(&q.query_id)
                    .cloned()
                    .unwrap_or_default(),
            )?);
        }
    } else {
        // Joint scorer: re-rank a fixed feature-space pre-retrieved pool.
        let feat_idx = EmbeddingIndex::from_features(fmap, corpus, -1)?;
        for q in split.queries.queries() {
            let qx = fmap.query_features(q)?;
            let pool = index::top_k(&feat_idx, &qx, RERANK_POOL);
            let mut scores = Vec::with_capacity(pool.indices.len());
            for &d in &pool.indices {
                scores.push(model.score_features(&qx, &fmap.document_features(corpus.doc(d))?)?);
            }
            let order = index::rerank(&scores);
            let ranked = order
                .into_iter()
                .take(k)
                .map(|pos| corpus.doc(pool.indices[pos]).doc_id.clone())
                .collect();
            results.push(QueryResult::new(
                q.query_id.clone(),
                ranked,
                split
                    .judgments
                    .relevant(&q.query_id)
                    .cloned()
                    .unwrap_or_default(),
            )?);
        }
    }
    let recall = recall_at_k(&results, k)?;
    let mrr_value = mrr(&results, k)?;
    Ok(SplitEval {
        results,
        recall,
        mrr: mrr_value,
        k_eval: k,
    })
}

// ---------------------------------------------------------------------------
// Metric records and aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub dataset: String,
    pub noise: f64,
    pub loss: String,
    pub seed: u64,
    pub recall_at_k: f64,
    pub mrr: f64,
    pub k_eval: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub dataset: String,
    pub noise: f64,
    pub loss: String,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub mrr_mean: f64,
    pub mrr_std: f64,
    pub n_runs: usize,
    pub k_eval: usize,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Group records by (dataset, noise, loss); mean and sample standard
/// deviation per group, rows ordered by the group key.
pub fn aggregate(records: &[MetricRecord]) -> Result<Vec<AggregateRow>> {
    let mut sorted: Vec<&MetricRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.dataset
            .cmp(&b.dataset)
            .then(a.noise.partial_cmp(&b.noise).expect("finite noise"))
            .then(a.loss.cmp(&b.loss))
            .then(a.seed.cmp(&b.seed))
    });
    let mut rows = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let head = sorted[i];
        let mut j = i;
        while j < sorted.len()
            && sorted[j].dataset == head.dataset
            && sorted[j].noise == head.noise
            && sorted[j].loss == head.loss
        {
            if sorted[j].k_eval != head.k_eval {
                return Err(Error::Invalid(format!(
                    "group ({}, {}, {}) mixes k_eval {} and {}",
                    head.dataset, head.noise, head.loss, head.k_eval, sorted[j].k_eval
                )));
            }
            j += 1;
        }
        let group = &sorted[i..j];
        let (recall_mean, recall_std) =
            mean_and_std(&group.iter().map(|r| r.recall_at_k).collect::<Vec<_>>());
        let (mrr_mean, mrr_std) = mean_and_std(&group.iter().map(|r| r.mrr).collect::<Vec<_>>());
        rows.push(AggregateRow {
            dataset: head.dataset.clone(),
            noise: head.noise,
            loss: head.loss.clone(),
            recall_mean,
            recall_std,
            mrr_mean,
            mrr_std,
            n_runs: group.len(),
            k_eval: head.k_eval,
        });
        i = j;
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// CSV interchange
// ---------------------------------------------------------------------------

/// `dataset,noise,loss,seed,recall@<k>,mrr` with metrics at 6 decimals.
pub fn metric_csv_string(records: &[MetricRecord]) -> Result<String> {
    let k = match records.first() {
        Some(r) => r.k_eval,
        None => 10,
    };
    if let Some(bad) = records.iter().find(|r| r.k_eval != k) {
        return Err(Error::Invalid(format!(
            "metric CSV mixes k_eval {} and {}",
            k, bad.k_eval
        )));
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["dataset", "noise", "loss", "seed", &format!("recall@{k}"), "mrr"])
        .map_err(|e| Error::Invalid(format!("csv write: {e}")))?;
    for r in records {
        wtr.write_record([
            r.dataset.as_str(),
            &r.noise.to_string(),
            r.loss.as_str(),
            &r.seed.to_string(),
            &format!("{:.6}", r.recall_at_k),
            &format!("{:.6}", r.mrr),
        ])
        .map_err(|e| Error::Invalid(format!("csv write: {e}")))?;
    }
    String::from_utf8(wtr.into_inner().map_err(|e| Error::Invalid(e.to_string()))?)
        .map_err(|e| Error::Invalid(e.to_string()))
}

pub fn write_metric_csv(records: &[MetricRecord], path: &Path) -> Result<()> {
    std::fs::write(path, metric_csv_string(records)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_metric_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let content =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_metric_csv(&content, &path.display().to_string())
}

pub fn parse_metric_csv(content: &str, source: &str) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(content.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source, 1, e.to_string()))?
        .clone();
    if headers.len() != 6 || !headers[4].starts_with("recall@") {
        return Err(Error::parse(
            source,
            1,
            format!("expected dataset,noise,loss,seed,recall@<k>,mrr header, got {headers:?}"),
        ));
    }
    let k_eval: usize = headers[4]["recall@".len()..]
        .parse()
        .map_err(|_| Error::parse(source, 1, format!("bad recall cutoff in {:?}", &headers[4])))?;
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(source, line, e.to_string()))?;
        if row.len() != 6 {
            return Err(Error::parse(source, line, format!("expected 6 fields, got {}", row.len())));
        }
        let field = |idx: usize, what: &str| -> Result<f64> {
            row[idx]
                .parse::<f64>()
                .map_err(|_| Error::parse(source, line, format!("bad {what}: {:?}", &row[idx])))
        };
        records.push(MetricRecord {
            dataset: row[0].to_string(),
            noise: field(1, "noise")?,
            loss: row[2].to_string(),
            seed: row[3]
                .parse::<u64>()
                .map_err(|_| Error::parse(source, line, format!("bad seed: {:?}", &row[3])))?,
            recall_at_k: field(4, "recall")?,
            mrr: field(5, "mrr")?,
            k_eval,
        });
    }
    Ok(records)
}

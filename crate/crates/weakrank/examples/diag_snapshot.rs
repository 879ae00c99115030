//! Scratch diagnostics (temporary): snapshot confidence of the true
//! positive for corrupted queries, across epochs.

use std::collections::HashMap;

use weakrank::dataset::{generate_synthetic, SyntheticSpec};
use weakrank::features::{FeatureMap, SparseVec};
use weakrank::index::{self, EmbeddingIndex};
use weakrank::losses::{softmax, LossSpec};
use weakrank::noise::{corrupted_bundle, NoiseSpec};
use weakrank::scorer::Side;
use weakrank::trainer::{train, TrainConfig};
use weakrank::weakening::PossibilityParams;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let beta = get("--beta", 0.9);
    let loss = if args.iter().any(|a| a == "--lw") {
        LossSpec::Lw(PossibilityParams {
            beta,
            ..PossibilityParams::default()
        })
    } else {
        LossSpec::Ce
    };

    let spec = SyntheticSpec {
        n_docs: 2000,
        n_queries: 400,
        n_clusters: 20,
        vocab_size: 600,
        seed: 0,
    };
    let clean = generate_synthetic(&spec).unwrap();
    let (noisy, records) = corrupted_bundle(&clean, &NoiseSpec::new(0.4, 0)).unwrap();
    let corrupted: HashMap<&str, (&str, &str)> = records
        .iter()
        .map(|r| (r.query_id.as_str(), (r.original.as_str(), r.replacement.as_str())))
        .collect();

    let base = TrainConfig {
        loss,
        batch_size: 4,
        learning_rate: 5e-4,
        ..TrainConfig::default()
    };
    // Train for e epochs, then snapshot under the final model.
    for epochs in [1usize, 3, 6, 10] {
        let cfg = TrainConfig {
            epochs,
            ..base.clone()
        };
        let outcome = train(&noisy, &cfg).unwrap();
        let model = outcome.model;
        let fmap = FeatureMap::hashed(cfg.feat_dim);
        let idx = EmbeddingIndex::build(&model, &fmap, &noisy.corpus, epochs as i64).unwrap();

        let mut p_true: Vec<f64> = Vec::new();
        let mut true_in_top = 0usize;
        let mut rank_true = Vec::new();
        for q in noisy.train.queries.queries() {
            let Some(&(orig, _repl)) = corrupted.get(q.query_id.as_str()) else {
                continue;
            };
            let qx = SparseVec::from_dense(&fmap.query_features(q).unwrap());
            let qe = model.embed_sparse(&qx, Side::Query).unwrap();
            let top = index::top_k(&idx, &qe, cfg.snapshot_top_k);
            let z: Vec<f64> = top.scores.iter().map(|s| s / cfg.temperature).collect();
            let probs = softmax(&z);
            let orig_idx = noisy.corpus.index_of(orig).unwrap();
            let pos = top.indices.iter().position(|&d| d == orig_idx);
            match pos {
                Some(r) => {
                    p_true.push(probs[r]);
                    rank_true.push(r + 1);
                    true_in_top += 1;
                }
                None => p_true.push(0.0),
            }
        }
        p_true.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let n = p_true.len();
        let pct = |q: f64| p_true[((n as f64 - 1.0) * q) as usize];
        let above: usize = p_true.iter().filter(|&&p| p >= beta).count();
        println!(
            "epochs={epochs}: corrupted={n} true-in-top20={true_in_top} p(true) p10={:.3} p25={:.3} p50={:.3} p75={:.3}  >=beta({beta})={above}",
            pct(0.1),
            pct(0.25),
            pct(0.5),
            pct(0.75),
        );
    }
}

//! Scratch diagnostics (temporary): which test queries fail under noisy
//! training, and are their targets the corrupted documents?

use std::collections::HashSet;

use weakrank::dataset::{generate_synthetic, SyntheticSpec};
use weakrank::eval;
use weakrank::features::FeatureMap;
use weakrank::losses::LossSpec;
use weakrank::noise::{corrupted_bundle, NoiseSpec};
use weakrank::trainer::{train, TrainConfig};
use weakrank::weakening::PossibilityParams;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let beta = args
        .iter()
        .position(|a| a == "--beta")
        .and_then(|i| args.get(i + 1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.9);
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
        vocab_size: 1000,
        seed: 0,
    };
    let clean = generate_synthetic(&spec).unwrap();
    let (noisy, records) = corrupted_bundle(&clean, &NoiseSpec::new(0.4, 0)).unwrap();
    let corrupted_docs: HashSet<&str> = records.iter().map(|r| r.original.as_str()).collect();
    let replacement_docs: HashSet<&str> =
        records.iter().map(|r| r.replacement.as_str()).collect();

    for (name, bundle) in [("clean", &clean), ("noisy", &noisy)] {
        let cfg = TrainConfig {
            loss: loss.clone(),
            ..TrainConfig::default()
        };
        let outcome = train(bundle, &cfg).unwrap();
        let fmap = FeatureMap::hashed(cfg.feat_dim);
        let ev =
            eval::evaluate_split(&outcome.model, &fmap, &clean.corpus, &clean.test, 10).unwrap();
        let mut fails_on_corrupted = 0;
        let mut fails_elsewhere = 0;
        let mut total_on_corrupted = 0;
        for r in &ev.results {
            let target = r.relevant.iter().next().unwrap().as_str();
            let hit = r.ranked.iter().take(10).any(|d| r.relevant.contains(d));
            let on_corrupted = corrupted_docs.contains(target);
            if on_corrupted {
                total_on_corrupted += 1;
            }
            if !hit {
                if on_corrupted {
                    fails_on_corrupted += 1;
                } else {
                    fails_elsewhere += 1;
                }
                let rank = r.ranked.iter().position(|d| r.relevant.contains(d));
                let evictors: usize = r
                    .ranked
                    .iter()
                    .take(10)
                    .filter(|d| replacement_docs.contains(d.as_str()))
                    .count();
                println!(
                    "  [{name}] miss {}: target={target} corrupted_target={on_corrupted} rank={:?} replacement-docs-in-top10={evictors}",
                    r.query_id, rank
                );
            }
        }
        println!(
            "[{name}] {}: recall@10={:.3} mrr={:.3} | test-on-corrupted={total_on_corrupted}/{} fails: corrupted={fails_on_corrupted} other={fails_elsewhere}",
            loss.kind(),
            ev.recall,
            ev.mrr,
            ev.results.len()
        );
    }
}

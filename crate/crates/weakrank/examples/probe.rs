//! Scratch diagnostics (temporary).

use weakrank::dataset::{generate_synthetic, SyntheticSpec};
use weakrank::eval;
use weakrank::features::FeatureMap;
use weakrank::index::{self, EmbeddingIndex};
use weakrank::losses::LossSpec;
use weakrank::scorer::Arch;
use weakrank::trainer::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let docs = get("--docs", 400.0) as usize;
    let queries = get("--queries", 120.0) as usize;
    let clusters = get("--clusters", 8.0) as usize;
    let vocab = get("--vocab", 400.0) as usize;
    let feat = get("--feat", 512.0) as usize;
    let embed = get("--embed", 256.0) as usize;
    let epochs = get("--epochs", 10.0) as usize;
    let lr = get("--lr", 0.0003);
    let tau = get("--tau", 0.1);
    let batch = get("--batch", 8.0) as usize;
    let arch = if args.iter().any(|a| a == "--shared") {
        Arch::SharedTower
    } else {
        Arch::DualTower
    };
    let optimizer = if args.iter().any(|a| a == "--sgd") {
        weakrank::trainer::Optimizer::Sgd
    } else {
        weakrank::trainer::Optimizer::default()
    };

    let loss = args
        .iter()
        .position(|a| a == "--loss")
        .and_then(|i| args.get(i + 1))
        .map(|k| LossSpec::default_for(k).unwrap())
        .unwrap_or(LossSpec::Ce);
    let noise_ratio = get("--noise", 0.0);
    let beta = get("--beta", 0.9);
    let loss = match loss {
        LossSpec::Lw(mut p) => {
            p.beta = beta;
            LossSpec::Lw(p)
        }
        other => other,
    };

    let spec = SyntheticSpec {
        n_docs: docs,
        n_queries: queries,
        n_clusters: clusters,
        vocab_size: vocab,
        seed: 0,
    };
    let mut bundle = generate_synthetic(&spec).unwrap();
    if noise_ratio > 0.0 {
        let (noisy, _) =
            weakrank::noise::corrupted_bundle(&bundle, &weakrank::noise::NoiseSpec::new(noise_ratio, 0))
                .unwrap();
        bundle = noisy;
    }
    let fmap = FeatureMap::hashed(feat);

    // Raw feature-space retrieval ceiling.
    let feat_idx = EmbeddingIndex::from_features(&fmap, &bundle.corpus, -1).unwrap();
    let mut results = Vec::new();
    for q in bundle.test.queries.queries() {
        let qx = fmap.query_features(q).unwrap();
        let top = index::top_k(&feat_idx, &qx, 10);
        let ranked: Vec<String> = top
            .indices
            .iter()
            .map(|&i| bundle.corpus.doc(i).doc_id.clone())
            .collect();
        results.push(
            eval::QueryResult::new(
                q.query_id.clone(),
                ranked,
                bundle
                    .test
                    .judgments
                    .relevant(&q.query_id)
                    .cloned()
                    .unwrap_or_default(),
            )
            .unwrap(),
        );
    }
    println!(
        "raw-feature retrieval: recall@10={:.3} mrr={:.3}",
        eval::recall_at_k(&results, 10).unwrap(),
        eval::mrr(&results, 10).unwrap()
    );

    // Training curve: evaluate after full training at several epoch counts.
    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        learning_rate: lr,
        optimizer,
        loss,
        arch,
        embed_dim: embed,
        feat_dim: feat,
        temperature: tau,
        negative_sample_pool: 1000,
        seed: 0,
        ..TrainConfig::default()
    };
    let outcome = train(&bundle, &cfg).unwrap();
    for log in &outcome.epochs {
        println!("{log}");
    }
    let ev = eval::evaluate_split(&outcome.model, &fmap, &bundle.corpus, &bundle.test, 10).unwrap();
    println!(
        "trained ({:?}, E={embed}, lr={lr}, tau={tau}, epochs={epochs}): recall@10={:.3} mrr={:.3}",
        arch, ev.recall, ev.mrr
    );
}

//! Scratch diagnostics (temporary): the criterion-6 margins over seeds.

use weakrank::dataset::{generate_synthetic, SyntheticSpec};
use weakrank::eval;
use weakrank::features::FeatureMap;
use weakrank::losses::LossSpec;
use weakrank::noise::{corrupted_bundle, NoiseSpec};
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
    let seeds = get("--seeds", 5.0) as u64;
    let epochs = get("--epochs", 10.0) as usize;
    let beta = get("--beta", 0.9);
    let pool = get("--pool", 1000.0) as usize;
    let lr = get("--lr", 3e-4);
    let snapk = get("--snapk", 20.0) as usize;
    let batch = get("--batch", 8.0) as usize;

    let spec = SyntheticSpec {
        n_docs: 2000,
        n_queries: 400,
        n_clusters: 20,
        vocab_size: 600,
        seed: 0,
    };
    let clean = generate_synthetic(&spec).unwrap();

    let lw = LossSpec::Lw(PossibilityParams {
        beta,
        ..PossibilityParams::default()
    });
    let mut means = std::collections::BTreeMap::new();
    for (label, ratio, loss) in [
        ("ce@0.0", 0.0, LossSpec::Ce),
        ("ce@0.4", 0.4, LossSpec::Ce),
        ("lw@0.4", 0.4, lw.clone()),
        ("lw@0.0", 0.0, lw),
    ] {
        let mut recalls = Vec::new();
        let mut mrrs = Vec::new();
        for seed in 0..seeds {
            let bundle = if ratio > 0.0 {
                corrupted_bundle(&clean, &NoiseSpec::new(ratio, seed)).unwrap().0
            } else {
                clean.clone()
            };
            let cfg = TrainConfig {
                loss: loss.clone(),
                seed,
                epochs,
                learning_rate: lr,
                negative_sample_pool: pool,
                snapshot_top_k: snapk,
                batch_size: batch,
                ..TrainConfig::default()
            };
            let outcome = train(&bundle, &cfg).unwrap();
            let fmap = FeatureMap::hashed(cfg.feat_dim);
            let ev = eval::evaluate_split(&outcome.model, &fmap, &clean.corpus, &clean.test, 10)
                .unwrap();
            recalls.push(ev.recall);
            mrrs.push(ev.mrr);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "{label}: recall={:.4} (per-seed {:?}) mrr={:.4}",
            mean(&recalls),
            recalls.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            mean(&mrrs)
        );
        means.insert(label, (mean(&recalls), mean(&mrrs)));
    }
    let ce0 = means["ce@0.0"].0;
    let ce4 = means["ce@0.4"].0;
    let lw4 = means["lw@0.4"].0;
    println!("margins: CE damage = {:.4} (need >= 0.05), LW - CE at 0.4 = {:.4} (need >= 0.05)", ce0 - ce4, lw4 - ce4);
}

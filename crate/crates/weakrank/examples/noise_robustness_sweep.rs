//! Mini noise-robustness sweep, all in memory: train a grid of losses
//! across noise ratios and seeds on a synthetic bundle, then print the
//! aggregate recall table.
//!
//! Usage: `cargo run --release --example noise_robustness_sweep [--fast]`
//!
//! `--fast` shrinks the grid for a quick look; the default mirrors the
//! full desk-scale setup (2000 docs, 400 queries, 20 clusters).

use weakrank::config::ExperimentConfig;
use weakrank::dataset::generate_synthetic;
use weakrank::eval::{self, MetricRecord};
use weakrank::features::FeatureMap;
use weakrank::noise::{corrupted_bundle, NoiseSpec};
use weakrank::report::{render_markdown, TableMetric};
use weakrank::trainer;

fn main() {
    let fast = std::env::args().any(|a| a == "--fast");
    let mut cfg = ExperimentConfig::default();
    if fast {
        let text = "\
noise.ratios = 0.0,0.4\nlosses = ce,lw\nseeds = 0,1,2\n";
        let flat = weakrank::config::FlatConfig::parse_str(text, "inline").unwrap();
        cfg = ExperimentConfig::from_flat(&flat).unwrap();
    } else {
        cfg.noise_ratios = vec![0.0, 0.2, 0.4];
        cfg.seeds = (0..3).collect();
    }

    let spec = match &cfg.source {
        weakrank::config::DataSource::Synthetic(s) => *s,
        _ => unreachable!(),
    };
    let bundle = generate_synthetic(&spec).unwrap();
    println!(
        "bundle: {} docs, {} train / {} validation / {} test queries",
        bundle.corpus.len(),
        bundle.train.queries.len(),
        bundle.validation.queries.len(),
        bundle.test.queries.len()
    );

    let mut records = Vec::new();
    for &ratio in &cfg.noise_ratios {
        for &seed in &cfg.seeds {
            let (noisy, _) = corrupted_bundle(&bundle, &NoiseSpec::new(ratio, seed)).unwrap();
            for loss in &cfg.losses {
                let train_cfg = cfg.cell_train_config(loss, seed);
                let start = std::time::Instant::now();
                let outcome = trainer::train(&noisy, &train_cfg).unwrap();
                let fmap = FeatureMap {
                    dim: train_cfg.feat_dim,
                    mode: train_cfg.feature_mode,
                };
                let ev = eval::evaluate_split(
                    &outcome.model,
                    &fmap,
                    &noisy.corpus,
                    &noisy.test,
                    cfg.eval_k,
                )
                .unwrap();
                println!(
                    "noise={ratio} loss={} seed={seed}: recall@{}={:.3} mrr={:.3} ({:.1}s)",
                    loss.kind(),
                    cfg.eval_k,
                    ev.recall,
                    ev.mrr,
                    start.elapsed().as_secs_f64()
                );
                records.push(MetricRecord {
                    dataset: bundle.name.clone(),
                    noise: ratio,
                    loss: loss.kind().to_string(),
                    seed,
                    recall_at_k: ev.recall,
                    mrr: ev.mrr,
                    k_eval: cfg.eval_k,
                });
            }
        }
    }

    let rows = eval::aggregate(&records).unwrap();
    let order: Vec<String> = cfg.losses.iter().map(|l| l.kind().to_string()).collect();
    println!();
    print!("{}", render_markdown(&rows, TableMetric::Recall, &order));
    println!();
    print!("{}", render_markdown(&rows, TableMetric::Mrr, &order));
}

//! Command surface behind the `weakrank` binary.
//!
//! Subcommands: `generate`, `corrupt`, `train`, `evaluate`, `sweep`,
//! `report`. All commands are non-interactive and exit-code disciplined:
//! 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::dataset::{
    load_bundle, save_bundle, generate_synthetic, BundlePaths, FileFormat, SplitPaths,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{self, MetricRecord};
use crate::features::FeatureMap;
use crate::noise::{self, NoiseSpec, SimilaritySpace};
use crate::report;
use crate::scorer::ScorerModel;
use crate::sweep;
use crate::trainer;

#[derive(Parser)]
#[command(
    name = "weakrank",
    version,
    about = "Train and evaluate retrieval scorers under injected label noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset and write it as TSV files.
    Generate(GenerateArgs),
    /// Corrupt training qrels with semantic-aware label noise.
    Corrupt(CorruptArgs),
    /// Train one scorer from a config file and save a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a query/qrels split.
    Evaluate(EvaluateArgs),
    /// Run the full (noise x loss x seed) sweep from a config file.
    Sweep(SweepArgs),
    /// Aggregate metric CSVs into Markdown and CSV tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of documents
    #[arg(long, default_value_t = 2000)]
    docs: usize,
    /// Number of queries (split 80/10/10 into train/validation/test)
    #[arg(long, default_value_t = 400)]
    queries: usize,
    /// Number of topic clusters
    #[arg(long, default_value_t = 20)]
    clusters: usize,
    /// Vocabulary size
    #[arg(long, default_value_t = 1000)]
    vocab: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Training queries TSV
    #[arg(long)]
    queries: PathBuf,
    /// Training qrels TSV
    #[arg(long)]
    qrels: PathBuf,
    /// Corpus/queries file format
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Fraction of training queries to corrupt, in [0,1]
    #[arg(long, value_parser = ratio_in_unit_interval)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample the replacement from the top-N similar pool instead of
    /// taking the single most similar document
    #[arg(long)]
    pool: Option<usize>,
    /// Similarity space: feature | initial-model
    #[arg(long, default_value = "feature")]
    space: String,
    /// Output directory (writes qrels.tsv and audit.tsv)
    #[arg(long)]
    out: PathBuf,
}

fn ratio_in_unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("ratio must be in [0,1], got {v}"))
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config file (flat key = value)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (checkpoint.bin, train_log.txt)
    #[arg(long)]
    out: PathBuf,
    /// Override the configured loss kind (default hyperparameters)
    #[arg(long)]
    loss: Option<String>,
    /// Override the training seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model checkpoint
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Metric cutoff K
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Metadata for the emitted CSV row
    #[arg(long, default_value = "dataset")]
    dataset_name: String,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "ce")]
    loss: String,
    /// Optional metrics CSV output path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Parallel cell executions
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Metric CSV files to aggregate
    #[arg(required = true)]
    csvs: Vec<PathBuf>,
    /// Output directory (report.md, aggregate.csv); stdout only if omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse and dispatch. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Corrupt(args) => cmd_corrupt(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<i32> {
    let bundle = generate_synthetic(&SyntheticSpec {
        n_docs: args.docs,
        n_queries: args.queries,
        n_clusters: args.clusters,
        vocab_size: args.vocab,
        seed: args.seed,
    })?;
    save_bundle(&bundle, &args.out)?;
    println!(
        "wrote {} docs, {}/{}/{} train/validation/test queries to {}",
        bundle.corpus.len(),
        bundle.train.queries.len(),
        bundle.validation.queries.len(),
        bundle.test.queries.len(),
        args.out.display()
    );
    Ok(0)
}

fn single_split_bundle(
    corpus: &Path,
    queries: &Path,
    qrels: &Path,
    format: FileFormat,
) -> Result<crate::dataset::DatasetBundle> {
    load_bundle(
        "cli",
        &BundlePaths {
            corpus: corpus.to_path_buf(),
            train: SplitPaths {
                queries: queries.to_path_buf(),
                qrels: qrels.to_path_buf(),
            },
            validation: None,
            test: None,
        },
        format,
    )
}

fn cmd_corrupt(args: CorruptArgs) -> Result<i32> {
    let format: FileFormat = args.format.parse()?;
    let bundle = single_split_bundle(&args.corpus, &args.queries, &args.qrels, format)?;
    let space = match args.space.as_str() {
        "feature" => SimilaritySpace::FeatureSpace,
        "initial-model" => SimilaritySpace::InitialModelSpace,
        other => {
            return Err(Error::Config(format!(
                "--space: expected feature|initial-model, got {other:?}"
            )))
        }
    };
    let spec = NoiseSpec {
        ratio: args.ratio,
        seed: args.seed,
        similarity_space: space,
        pool_size: args.pool,
    };
    fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let qrels_out = args.out.join("qrels.tsv");
    let audit_out = args.out.join("audit.tsv");
    let (judgments, records) = noise::inject_noise(&bundle, &spec)?;
    if records.is_empty() {
        // Nothing corrupted: the output is the input, byte for byte.
        fs::copy(&args.qrels, &qrels_out)
            .map_err(|e| Error::io(qrels_out.display().to_string(), e))?;
        fs::write(&audit_out, "").map_err(|e| Error::io(audit_out.display().to_string(), e))?;
    } else {
        noise::write_qrels(&judgments, &qrels_out)?;
        noise::write_audit(&records, &audit_out)?;
    }
    println!(
        "corrupted {} of {} training queries; wrote {} and {}",
        records.len(),
        bundle.train.judgments.len(),
        qrels_out.display(),
        audit_out.display()
    );
    Ok(0)
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(kind) = &args.loss {
        cfg.train.loss = crate::losses::LossSpec::default_for(kind)?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let bundle = cfg.load_dataset()?;
    let outcome = trainer::train(&bundle, &cfg.train)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let ckpt = args.out.join("checkpoint.bin");
    outcome.model.save(&ckpt)?;
    let mut log = String::new();
    for e in &outcome.epochs {
        println!("{e}");
        log.push_str(&e.to_string());
        log.push('\n');
    }
    fs::write(args.out.join("train_log.txt"), log)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    println!("checkpoint written to {}", ckpt.display());
    // Report validation metrics when a validation split exists.
    if !bundle.validation.queries.is_empty() {
        let fmap = FeatureMap {
            dim: cfg.train.feat_dim,
            mode: cfg.train.feature_mode,
        };
        let eval = eval::evaluate_split(
            &outcome.model,
            &fmap,
            &bundle.corpus,
            &bundle.validation,
            cfg.eval_k,
        )?;
        println!(
            "validation recall@{}={:.6} mrr={:.6}",
            cfg.eval_k, eval.recall, eval.mrr
        );
    }
    Ok(0)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    let format: FileFormat = args.format.parse()?;
    let model = ScorerModel::load(&args.model)?;
    let bundle = single_split_bundle(&args.corpus, &args.queries, &args.qrels, format)?;
    let fmap = FeatureMap {
        dim: model.feat_dim,
        mode: crate::features::FeatureMode::HashedBagOfTokens,
    };
    let eval_out = eval::evaluate_split(&model, &fmap, &bundle.corpus, &bundle.train, args.k)?;
    println!("recall@{}={:.6} mrr={:.6}", args.k, eval_out.recall, eval_out.mrr);
    if let Some(out) = &args.out {
        let record = MetricRecord {
            dataset: args.dataset_name.clone(),
            noise: args.noise,
            loss: args.loss.clone(),
            seed: args.seed,
            recall_at_k: eval_out.recall,
            mrr: eval_out.mrr,
            k_eval: args.k,
        };
        eval::write_metric_csv(std::slice::from_ref(&record), out)?;
        println!("metrics written to {}", out.display());
    }
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<i32> {
    if args.jobs == 0 {
        return Err(Error::Config("--jobs must be >= 1".into()));
    }
    let cfg = ExperimentConfig::from_file(&args.config)?;
    let outcome = sweep::run_sweep(&cfg, &args.out, args.jobs)?;
    println!(
        "{} records ({} cells trained this run); outputs in {}",
        outcome.records.len(),
        outcome.trained_cells,
        args.out.display()
    );
    if !outcome.failed.is_empty() {
        for f in &outcome.failed {
            eprintln!("failed cell: {f}");
        }
        return Ok(1);
    }
    Ok(0)
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    let mut records = Vec::new();
    for path in &args.csvs {
        records.extend(eval::read_metric_csv(path)?);
    }
    let (md, agg) = report::render_report(&records, &[])?;
    print!("{md}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
        fs::write(out.join("report.md"), &md)
            .map_err(|e| Error::io(out.display().to_string(), e))?;
        fs::write(out.join("aggregate.csv"), &agg)
            .map_err(|e| Error::io(out.display().to_string(), e))?;
    }
    Ok(0)
}

//! Flat `key = value` experiment configs with dotted keys.
//!
//! Grammar (documented here and in the README):
//! - one `key = value` pair per line; keys are dotted lowercase identifiers
//! - `#` starts a comment (full line or trailing); blank lines are ignored
//! - whitespace around keys and values is ignored
//! - duplicate keys and unknown keys are errors
//!
//! The config hash is computed over the *resolved* configuration (defaults
//! filled in, entries sorted), so formatting, comments, and spelling out a
//! default never change it, while any semantically meaningful change does.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dataset::{
    generate_synthetic, load_bundle, BundlePaths, DatasetBundle, FileFormat, SplitPaths,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::losses::LossSpec;
use crate::trainer::{Optimizer, TrainConfig};

/// Parsed `key = value` entries, order-insensitive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn parse_str(text: &str, source: &str) -> Result<FlatConfig> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(source, lineno + 1, "expected key = value")
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::parse(source, lineno + 1, "empty key"));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::parse(
                    source,
                    lineno + 1,
                    format!("duplicate key {key:?}"),
                ));
            }
        }
        Ok(FlatConfig { entries })
    }

    pub fn from_file(path: &Path) -> Result<FlatConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse_str(&text, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn parse_f64(value: &str, key: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: not a number: {value:?}")))
}

fn parse_usize(value: &str, key: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: not an integer: {value:?}")))
}

fn parse_u64(value: &str, key: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: not an integer: {value:?}")))
}

fn parse_list<T>(value: &str, key: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<&str> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    items.into_iter().map(|s| f(s, key)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Files {
        format: FileFormat,
        paths: BundlePaths,
    },
}

/// Everything a sweep (or single run) needs, resolved with defaults.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub source: DataSource,
    pub noise_ratios: Vec<f64>,
    pub losses: Vec<LossSpec>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub eval_k: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "synthetic".into(),
            source: DataSource::Synthetic(SyntheticSpec {
                n_docs: 2000,
                n_queries: 400,
                n_clusters: 20,
                vocab_size: 1000,
                seed: 0,
            }),
            noise_ratios: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            losses: ["ce", "nce", "gce", "agce", "aul", "ls", "els", "nagce", "naul", "lr", "lw"]
                .iter()
                .map(|k| LossSpec::default_for(k).unwrap())
                .collect(),
            seeds: (0..10).collect(),
            train: TrainConfig::default(),
            eval_k: 10,
        }
    }
}

const KNOWN_KINDS: [&str; 12] = [
    "ce", "nce", "gce", "agce", "aul", "ls", "els", "nagce", "naul", "lr", "lw", "pairwise",
];

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_flat(&FlatConfig::from_file(path)?)
    }

    pub fn from_flat(flat: &FlatConfig) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut loss_kinds: Option<Vec<String>> = None;
        let mut single_kind: Option<String> = None;
        let mut single_hypers: BTreeMap<String, String> = BTreeMap::new();
        let mut kind_hypers: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut synth = match &cfg.source {
            DataSource::Synthetic(s) => *s,
            DataSource::Files { .. } => unreachable!(),
        };
        let mut files_format = FileFormat::Tsv;
        let mut file_keys: BTreeMap<&str, PathBuf> = BTreeMap::new();
        let mut use_files = false;
        let mut adam = (0.9, 0.999, 1e-8);
        let mut use_sgd = false;

        for (key, value) in flat.entries() {
            match key {
                "dataset.source" => match value {
                    "synthetic" => use_files = false,
                    "files" => use_files = true,
                    other => {
                        return Err(Error::Config(format!(
                            "dataset.source: expected synthetic|files, got {other:?}"
                        )))
                    }
                },
                "dataset.name" => cfg.name = value.to_string(),
                "dataset.format" => files_format = value.parse()?,
                "dataset.corpus"
                | "dataset.train_queries"
                | "dataset.train_qrels"
                | "dataset.validation_queries"
                | "dataset.validation_qrels"
                | "dataset.test_queries"
                | "dataset.test_qrels" => {
                    file_keys.insert(key.strip_prefix("dataset.").unwrap(), PathBuf::from(value));
                }
                "synthetic.docs" => synth.n_docs = parse_usize(value, key)?,
                "synthetic.queries" => synth.n_queries = parse_usize(value, key)?,
                "synthetic.clusters" => synth.n_clusters = parse_usize(value, key)?,
                "synthetic.vocab" => synth.vocab_size = parse_usize(value, key)?,
                "synthetic.seed" => synth.seed = parse_u64(value, key)?,
                "noise.ratios" => cfg.noise_ratios = parse_list(value, key, parse_f64)?,
                "losses" => {
                    loss_kinds = Some(
                        value
                            .split(',')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                            .collect(),
                    )
                }
                "seeds" => cfg.seeds = parse_list(value, key, parse_u64)?,
                "loss.kind" => single_kind = Some(value.to_string()),
                "train.epochs" => cfg.train.epochs = parse_usize(value, key)?,
                "train.batch_size" => cfg.train.batch_size = parse_usize(value, key)?,
                "train.learning_rate" => cfg.train.learning_rate = parse_f64(value, key)?,
                "train.optimizer" => match value {
                    "sgd" => use_sgd = true,
                    "adam" | "adaptive_moments" => use_sgd = false,
                    other => {
                        return Err(Error::Config(format!(
                            "train.optimizer: expected sgd|adam, got {other:?}"
                        )))
                    }
                },
                "train.adam_beta1" => adam.0 = parse_f64(value, key)?,
                "train.adam_beta2" => adam.1 = parse_f64(value, key)?,
                "train.adam_eps" => adam.2 = parse_f64(value, key)?,
                "train.n_hard_negatives" => cfg.train.n_hard_negatives = parse_usize(value, key)?,
                "train.negative_sample_pool" => {
                    cfg.train.negative_sample_pool = parse_usize(value, key)?
                }
                "train.arch" => cfg.train.arch = value.parse()?,
                "train.embed_dim" => cfg.train.embed_dim = parse_usize(value, key)?,
                "train.feat_dim" => cfg.train.feat_dim = parse_usize(value, key)?,
                "train.temperature" => cfg.train.temperature = parse_f64(value, key)?,
                "train.feature_mode" => {
                    cfg.train.feature_mode = match value {
                        "hashed" => FeatureMode::HashedBagOfTokens,
                        "passthrough" => FeatureMode::Passthrough,
                        other => {
                            return Err(Error::Config(format!(
                                "train.feature_mode: expected hashed|passthrough, got {other:?}"
                            )))
                        }
                    }
                }
                "train.snapshot_top_k" => cfg.train.snapshot_top_k = parse_usize(value, key)?,
                "train.joint_candidates" => cfg.train.joint_candidates = parse_usize(value, key)?,
                "train.seed" => cfg.train.seed = parse_u64(value, key)?,
                "eval.k" => cfg.eval_k = parse_usize(value, key)?,
                other => {
                    // loss.<hyper> (single-run) or loss.<kind>.<hyper> (sweep).
                    if let Some(rest) = other.strip_prefix("loss.") {
                        if let Some((kind, hyper)) = rest.split_once('.') {
                            if !KNOWN_KINDS.contains(&kind) {
                                return Err(Error::Config(format!(
                                    "unknown loss kind in key {other:?}"
                                )));
                            }
                            kind_hypers
                                .entry(kind.to_string())
                                .or_default()
                                .insert(hyper.to_string(), value.to_string());
                        } else {
                            single_hypers.insert(rest.to_string(), value.to_string());
                        }
                    } else if let Some(hyper) = other.strip_prefix("lw.") {
                        kind_hypers
                            .entry("lw".to_string())
                            .or_default()
                            .insert(hyper.to_string(), value.to_string());
                    } else {
                        return Err(Error::Config(format!("unknown key {other:?}")));
                    }
                }
            }
        }

        cfg.train.optimizer = if use_sgd {
            Optimizer::Sgd
        } else {
            Optimizer::AdaptiveMoments {
                beta1: adam.0,
                beta2: adam.1,
                eps: adam.2,
            }
        };

        cfg.source = if use_files {
            let take = |k: &str| -> Result<PathBuf> {
                file_keys
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("dataset.{k} required for file source")))
            };
            let optional_split = |q: &str, r: &str| -> Result<Option<SplitPaths>> {
                match (file_keys.get(q), file_keys.get(r)) {
                    (Some(queries), Some(qrels)) => Ok(Some(SplitPaths {
                        queries: queries.clone(),
                        qrels: qrels.clone(),
                    })),
                    (None, None) => Ok(None),
                    _ => Err(Error::Config(format!(
                        "dataset.{q} and dataset.{r} must be given together"
                    ))),
                }
            };
            DataSource::Files {
                format: files_format,
                paths: BundlePaths {
                    corpus: take("corpus")?,
                    train: SplitPaths {
                        queries: take("train_queries")?,
                        qrels: take("train_qrels")?,
                    },
                    validation: optional_split("validation_queries", "validation_qrels")?,
                    test: optional_split("test_queries", "test_qrels")?,
                },
            }
        } else {
            DataSource::Synthetic(synth)
        };

        // Resolve the loss list: explicit single kind beats the sweep list.
        if let Some(kind) = single_kind {
            cfg.losses = vec![LossSpec::from_config(&kind, &single_hypers)?];
        } else {
            if !single_hypers.is_empty() {
                let key = single_hypers.keys().next().unwrap();
                return Err(Error::Config(format!(
                    "loss.{key} given without loss.kind"
                )));
            }
            let kinds = loss_kinds.unwrap_or_else(|| {
                cfg.losses.iter().map(|l| l.kind().to_string()).collect()
            });
            cfg.losses = kinds
                .iter()
                .map(|k| {
                    let hypers = kind_hypers.remove(k.as_str()).unwrap_or_default();
                    LossSpec::from_config(k, &hypers)
                })
                .collect::<Result<_>>()?;
            if let Some(extra) = kind_hypers.keys().next() {
                if !cfg.losses.iter().any(|l| l.kind() == extra) {
                    return Err(Error::Config(format!(
                        "hyperparameters given for {extra:?}, which is not in `losses`"
                    )));
                }
            }
        }

        for ratio in &cfg.noise_ratios {
            if !(0.0..=1.0).contains(ratio) {
                return Err(Error::Config(format!(
                    "noise.ratios: {ratio} outside [0,1]"
                )));
            }
        }
        if cfg.seeds.is_empty() || cfg.losses.is_empty() {
            return Err(Error::Config("need at least one seed and one loss".into()));
        }
        cfg.train.loss = cfg.losses[0].clone();
        Ok(cfg)
    }

    /// Resolved canonical entries: every semantically meaningful field,
    /// sorted. Two configs hash equal iff these match.
    pub fn canonical_entries(&self) -> Vec<(String, String)> {
        let mut entries: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| entries.push((k.to_string(), v));
        push("dataset.name", self.name.clone());
        match &self.source {
            DataSource::Synthetic(s) => {
                push("dataset.source", "synthetic".into());
                push("synthetic.docs", s.n_docs.to_string());
                push("synthetic.queries", s.n_queries.to_string());
                push("synthetic.clusters", s.n_clusters.to_string());
                push("synthetic.vocab", s.vocab_size.to_string());
                push("synthetic.seed", s.seed.to_string());
            }
            DataSource::Files { format, paths } => {
                push("dataset.source", "files".into());
                push(
                    "dataset.format",
                    match format {
                        FileFormat::Tsv => "tsv".into(),
                        FileFormat::Jsonl => "jsonl".into(),
                    },
                );
                push("dataset.corpus", paths.corpus.display().to_string());
                push(
                    "dataset.train_queries",
                    paths.train.queries.display().to_string(),
                );
                push("dataset.train_qrels", paths.train.qrels.display().to_string());
                if let Some(v) = &paths.validation {
                    push(
                        "dataset.validation_queries",
                        v.queries.display().to_string(),
                    );
                    push("dataset.validation_qrels", v.qrels.display().to_string());
                }
                if let Some(t) = &paths.test {
                    push("dataset.test_queries", t.queries.display().to_string());
                    push("dataset.test_qrels", t.qrels.display().to_string());
                }
            }
        }
        push(
            "noise.ratios",
            self.noise_ratios
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push(
            "seeds",
            self.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push(
            "losses",
            self.losses
                .iter()
                .map(|l| l.kind().to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        for loss in &self.losses {
            for (k, v) in loss.to_config_entries() {
                if k != "loss.kind" {
                    let hyper = k.strip_prefix("loss.").unwrap();
                    entries.push((format!("loss.{}.{hyper}", loss.kind()), v));
                }
            }
        }
        let t = &self.train;
        let mut push = |k: &str, v: String| entries.push((k.to_string(), v));
        push("train.epochs", t.epochs.to_string());
        push("train.batch_size", t.batch_size.to_string());
        push("train.learning_rate", t.learning_rate.to_string());
        match t.optimizer {
            Optimizer::Sgd => push("train.optimizer", "sgd".into()),
            Optimizer::AdaptiveMoments { beta1, beta2, eps } => {
                push("train.optimizer", "adam".into());
                push("train.adam_beta1", beta1.to_string());
                push("train.adam_beta2", beta2.to_string());
                push("train.adam_eps", eps.to_string());
            }
        }
        push("train.n_hard_negatives", t.n_hard_negatives.to_string());
        push(
            "train.negative_sample_pool",
            t.negative_sample_pool.to_string(),
        );
        push("train.arch", t.arch.name().into());
        push("train.embed_dim", t.embed_dim.to_string());
        push("train.feat_dim", t.feat_dim.to_string());
        push("train.temperature", t.temperature.to_string());
        push(
            "train.feature_mode",
            match t.feature_mode {
                FeatureMode::HashedBagOfTokens => "hashed".into(),
                FeatureMode::Passthrough => "passthrough".into(),
            },
        );
        push("train.snapshot_top_k", t.snapshot_top_k.to_string());
        push("train.joint_candidates", t.joint_candidates.to_string());
        push("train.seed", t.seed.to_string());
        push("eval.k", self.eval_k.to_string());
        entries.sort();
        entries
    }

    /// SHA-256 over the resolved canonical form.
    pub fn hash(&self) -> String {
        let mut text = String::new();
        for (k, v) in self.canonical_entries() {
            writeln!(text, "{k}={v}").unwrap();
        }
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load_dataset(&self) -> Result<DatasetBundle> {
        match &self.source {
            DataSource::Synthetic(spec) => {
                let mut bundle = generate_synthetic(spec)?;
                bundle.name = self.name.clone();
                Ok(bundle)
            }
            DataSource::Files { format, paths } => load_bundle(&self.name, paths, *format),
        }
    }

    /// Train config for one sweep cell.
    pub fn cell_train_config(&self, loss: &LossSpec, seed: u64) -> TrainConfig {
        TrainConfig {
            loss: loss.clone(),
            seed,
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let text = "\n# a comment\n  train.epochs = 5  # trailing\n\nloss.kind = gce\nloss.g=0.5\n";
        let flat = FlatConfig::parse_str(text, "test").unwrap();
        assert_eq!(flat.get("train.epochs"), Some("5"));
        assert_eq!(flat.get("loss.g"), Some("0.5"));
        let cfg = ExperimentConfig::from_flat(&flat).unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.losses, vec![LossSpec::Gce { g: 0.5 }]);
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = FlatConfig::parse_str("a.b = 1\na.b = 2\n", "test").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let flat = FlatConfig::parse_str("tran.epochs = 5\n", "test").unwrap();
        assert!(ExperimentConfig::from_flat(&flat).is_err());
    }

    #[test]
    fn hash_ignores_formatting_and_defaults() {
        let a = ExperimentConfig::from_flat(
            &FlatConfig::parse_str("losses = ce,lw\n", "a").unwrap(),
        )
        .unwrap();
        let b = ExperimentConfig::from_flat(
            &FlatConfig::parse_str(
                "# sweep over two losses\n  losses =  ce , lw \ntrain.epochs = 10\n",
                "b",
            )
            .unwrap(),
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn hash_changes_with_any_semantic_field() {
        let base = ExperimentConfig::from_flat(
            &FlatConfig::parse_str("losses = ce,lw\n", "a").unwrap(),
        )
        .unwrap();
        for change in [
            "losses = ce,lw\ntrain.epochs = 3\n",
            "losses = ce,lw\nseeds = 0,1\n",
            "losses = ce,lw\nnoise.ratios = 0.0,0.5\n",
            "losses = ce,gce\n",
            "losses = ce,lw\nloss.lw.beta = 0.8\n",
            "losses = ce,lw\nsynthetic.docs = 100\n",
        ] {
            let other = ExperimentConfig::from_flat(
                &FlatConfig::parse_str(change, "b").unwrap(),
            )
            .unwrap();
            assert_ne!(base.hash(), other.hash(), "change {change:?} kept the hash");
        }
    }

    #[test]
    fn per_kind_hypers_apply_in_sweeps() {
        let cfg = ExperimentConfig::from_flat(
            &FlatConfig::parse_str("losses = gce,lw\nloss.gce.g = 0.3\nlw.beta = 0.8\n", "t")
                .unwrap(),
        )
        .unwrap();
        assert_eq!(cfg.losses[0], LossSpec::Gce { g: 0.3 });
        match &cfg.losses[1] {
            LossSpec::Lw(p) => assert_eq!(p.beta, 0.8),
            other => panic!("expected lw, got {other:?}"),
        }
    }

    #[test]
    fn loss_hyper_without_kind_is_rejected() {
        let flat = FlatConfig::parse_str("loss.g = 0.5\n", "t").unwrap();
        assert!(ExperimentConfig::from_flat(&flat).is_err());
    }

    #[test]
    fn synthetic_dataset_loads() {
        let cfg = ExperimentConfig::from_flat(
            &FlatConfig::parse_str(
                "synthetic.docs = 50\nsynthetic.queries = 20\nsynthetic.clusters = 5\nsynthetic.vocab = 100\n",
                "t",
            )
            .unwrap(),
        )
        .unwrap();
        let bundle = cfg.load_dataset().unwrap();
        assert_eq!(bundle.corpus.len(), 50);
    }
}

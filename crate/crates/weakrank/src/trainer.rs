//! Epoch-based gradient training with in-batch negatives, hard negatives,
//! per-loss dispatch, and grid search.
//!
//! One run is strictly sequential and fully seeded: identical (bundle,
//! config) gives bit-identical parameters and logs on one platform.
//! Independent runs own all their state and may execute in parallel.
//!
//! Epoch bookkeeping: the index consumed during epoch `e` was built at the
//! end of epoch `e-1` (the initial index, built from the freshly initialized
//! parameters, carries build epoch -1). Label weakening consumes the
//! confidence snapshot produced at the end of epoch `e-1`; epoch 0 consumes
//! none and trains on annotated labels alone.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::time::Instant;

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::features::{FeatureMap, FeatureMode, SparseVec};
use crate::index::{self, EmbeddingIndex, NeighborTable};
use crate::losses::{self, CandidateList, ElsContext, LossSpec};
use crate::scorer::{Arch, ScorerModel, Side};
use crate::seeding;
use crate::weakening::{self, AmbiguatedTargets, ConfidenceSnapshot, PossibilityParams};

// PRNG stream tags.
const TAG_BATCH: u64 = 0x30;
const TAG_MINE: u64 = 0x31;
const TAG_JOINT_POOL: u64 = 0x32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    AdaptiveMoments { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::AdaptiveMoments {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub n_hard_negatives: usize,
    pub negative_sample_pool: usize,
    pub seed: u64,
    pub loss: LossSpec,
    pub arch: Arch,
    pub embed_dim: usize,
    pub feat_dim: usize,
    pub temperature: f64,
    pub feature_mode: FeatureMode,
    /// Candidate-list size for end-of-epoch confidence snapshots.
    pub snapshot_top_k: usize,
    /// Fixed candidate-list size (positive + negatives) for the joint arch.
    pub joint_candidates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            // Tuned to the tied-projection scorers: larger rates overwrite
            // the structure the initialization starts from, and temperatures
            // near 1 leave the candidate softmax too flat to rank.
            learning_rate: 3e-4,
            optimizer: Optimizer::default(),
            n_hard_negatives: 4,
            negative_sample_pool: 1000,
            seed: 0,
            loss: LossSpec::Ce,
            arch: Arch::DualTower,
            embed_dim: 256,
            feat_dim: 512,
            temperature: 0.1,
            feature_mode: FeatureMode::HashedBagOfTokens,
            snapshot_top_k: 20,
            joint_candidates: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "train.batch_size must be >= 2 (in-batch negatives need a non-positive)".into(),
            ));
        }
        if self.embed_dim == 0 || self.feat_dim == 0 {
            return Err(Error::Config("embed_dim and feat_dim must be positive".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.joint_candidates < 2 {
            return Err(Error::Config("joint_candidates must be >= 2".into()));
        }
        if self.snapshot_top_k == 0 {
            return Err(Error::Config("snapshot_top_k must be >= 1".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub rebuild_ms: u128,
    /// FNV over the parameter bytes after this epoch's updates.
    pub param_checksum: u64,
    /// Epoch stamp of the snapshot consumed during this epoch (LW only).
    pub snapshot_epoch_used: Option<i64>,
    /// |R*| histogram over queries seen this epoch (LW only).
    pub r_star_hist: Option<BTreeMap<usize, usize>>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} mean_loss={:.6} rebuild_ms={} param_checksum={:016x}",
            self.epoch, self.mean_loss, self.rebuild_ms, self.param_checksum
        )?;
        if let Some(se) = self.snapshot_epoch_used {
            write!(f, " snapshot_epoch={se}")?;
        }
        if let Some(hist) = &self.r_star_hist {
            let parts: Vec<String> = hist.iter().map(|(k, v)| format!("{k}:{v}")).collect();
            write!(f, " rstar_hist={}", parts.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ScorerModel,
    pub epochs: Vec<EpochLog>,
}

fn param_checksum(params: &[f64]) -> u64 {
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    crate::features::fnv1a(&bytes)
}

/// Per-query training inputs cached once per run.
struct QueryPlan {
    query_id: String,
    features: SparseVec,
    positive: usize,
    relevant: HashSet<usize>,
}

fn build_query_plans(bundle: &DatasetBundle, fmap: &FeatureMap) -> Result<Vec<QueryPlan>> {
    bundle
        .train
        .queries
        .queries()
        .iter()
        .map(|q| {
            let judged = bundle
                .train
                .judgments
                .relevant(&q.query_id)
                .ok_or_else(|| {
                    Error::Invalid(format!("query {:?} has no judgments", q.query_id))
                })?;
            let positive_id = judged.iter().next().expect("non-empty relevant set");
            let positive = bundle
                .corpus
                .index_of(positive_id)
                .ok_or_else(|| Error::DanglingDoc {
                    doc_id: positive_id.clone(),
                })?;
            let relevant = judged
                .iter()
                .map(|d| {
                    bundle
                        .corpus
                        .index_of(d)
                        .ok_or_else(|| Error::DanglingDoc { doc_id: d.clone() })
                })
                .collect::<Result<HashSet<usize>>>()?;
            Ok(QueryPlan {
                query_id: q.query_id.clone(),
                features: SparseVec::from_dense(&fmap.query_features(q)?),
                positive,
                relevant,
            })
        })
        .collect()
}

/// Embed every document under the current parameters and wrap as an index.
fn rebuild_index(
    model: &ScorerModel,
    docs_sparse: &[SparseVec],
    corpus: &crate::dataset::Corpus,
    epoch: i64,
) -> Result<EmbeddingIndex> {
    let mut rows = Vec::with_capacity(docs_sparse.len() * model.embed_dim);
    for xd in docs_sparse {
        rows.extend(model.embed_sparse(xd, Side::Doc)?);
    }
    EmbeddingIndex::from_embeddings(corpus, model.embed_dim, rows, epoch)
}

/// Seeded per-epoch batches of candidate lists for the bi-encoder path.
///
/// Per query: its positive first, then the other batch members' positives
/// (in-batch negatives), then mined hard negatives, deduplicated by doc with
/// the positive retained. Queries whose list collapses below two candidates
/// are skipped for the epoch.
pub fn make_batches(
    bundle: &DatasetBundle,
    model: &ScorerModel,
    fmap: &FeatureMap,
    idx: &EmbeddingIndex,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<Vec<CandidateList>>> {
    let plans = build_query_plans(bundle, fmap)?;
    let query_embeddings: Vec<Vec<f64>> = plans
        .iter()
        .map(|p| model.embed_sparse(&p.features, Side::Query))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..plans.len()).collect();
    let mut rng = seeding::rng_for(cfg.seed, TAG_BATCH, epoch as u64);
    seeding::shuffle(&mut order, &mut rng);

    let mut batches = Vec::new();
    for chunk in order.chunks(cfg.batch_size) {
        let mut batch = Vec::with_capacity(chunk.len());
        for &qi in chunk {
            let plan = &plans[qi];
            let mut docs = vec![plan.positive];
            let mut seen: HashSet<usize> = docs.iter().copied().collect();
            for &other in chunk {
                if other == qi {
                    continue;
                }
                let d = plans[other].positive;
                if seen.insert(d) {
                    docs.push(d);
                }
            }
            let mine_seed = seeding::stream_seed(cfg.seed, TAG_MINE, epoch as u64);
            let mut mine_rng = seeding::rng_for(mine_seed, 0, qi as u64);
            for d in index::mine_hard_negatives(
                idx,
                &query_embeddings[qi],
                &plan.relevant,
                cfg.n_hard_negatives,
                cfg.negative_sample_pool,
                &mut mine_rng,
            ) {
                if seen.insert(d) {
                    docs.push(d);
                }
            }
            if docs.len() >= 2 {
                batch.push(CandidateList::new(plan.query_id.clone(), docs, 0)?);
            }
        }
        if !batch.is_empty() {
            batches.push(batch);
        }
    }
    Ok(batches)
}

/// Fixed candidate lists for the joint scorer: positive plus feature-space
/// mined negatives, built once and reused every epoch.
fn joint_candidate_lists(
    plans: &[QueryPlan],
    feat_index: &EmbeddingIndex,
    cfg: &TrainConfig,
) -> Result<Vec<Option<CandidateList>>> {
    plans
        .iter()
        .enumerate()
        .map(|(qi, plan)| {
            let mut rng = seeding::rng_for(cfg.seed, TAG_JOINT_POOL, qi as u64);
            let negs = index::mine_hard_negatives(
                feat_index,
                &plan.features.to_dense(),
                &plan.relevant,
                cfg.joint_candidates - 1,
                cfg.negative_sample_pool,
                &mut rng,
            );
            let mut docs = vec![plan.positive];
            let mut seen: HashSet<usize> = docs.iter().copied().collect();
            for d in negs {
                if seen.insert(d) {
                    docs.push(d);
                }
            }
            if docs.len() >= 2 {
                Ok(Some(CandidateList::new(plan.query_id.clone(), docs, 0)?))
            } else {
                Ok(None)
            }
        })
        .collect()
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

fn apply_update(cfg: &TrainConfig, model: &mut ScorerModel, grad: &[f64], adam: &mut AdamState) {
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in model.params.iter_mut().zip(grad) {
                *p -= cfg.learning_rate * g;
            }
        }
        Optimizer::AdaptiveMoments { beta1, beta2, eps } => {
            adam.t += 1;
            let bc1 = 1.0 - beta1.powi(adam.t as i32);
            let bc2 = 1.0 - beta2.powi(adam.t as i32);
            for i in 0..grad.len() {
                adam.m[i] = beta1 * adam.m[i] + (1.0 - beta1) * grad[i];
                adam.v[i] = beta2 * adam.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let mh = adam.m[i] / bc1;
                let vh = adam.v[i] / bc2;
                model.params[i] -= cfg.learning_rate * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Loss value and d(loss)/d(scores) for one candidate list.
#[allow(clippy::too_many_arguments)]
fn query_loss(
    cfg: &TrainConfig,
    cl: &CandidateList,
    z: &[f64],
    snapshot: Option<&ConfidenceSnapshot>,
    sim_index: &EmbeddingIndex,
    table: Option<&NeighborTable>,
    hist: &mut BTreeMap<usize, usize>,
) -> Result<(f64, Vec<f64>)> {
    match &cfg.loss {
        LossSpec::Lw(lw) => {
            let targets = lw_targets(lw, cl, snapshot)?;
            *hist.entry(targets.r_star.len()).or_insert(0) += 1;
            let value = weakening::superset_loss(&targets, z, lw)?;
            let grad = weakening::superset_loss_grad(&targets, z, lw)?;
            Ok((value, grad))
        }
        LossSpec::Pairwise(pair) => {
            let params = PossibilityParams {
                pair_loss: *pair,
                ..PossibilityParams::default()
            };
            let negatives: Vec<usize> = (0..z.len()).filter(|&i| i != cl.positive).collect();
            let value = weakening::pairwise_loss(z, cl.positive, &negatives, &params);
            let grad = weakening::pairwise_loss_grad(z, cl.positive, &negatives, &params);
            Ok((value, grad))
        }
        LossSpec::Els { lambda, .. } => {
            let table = table.expect("neighbor table is built for ELS runs");
            let sims = index::els_similarities(sim_index, table, &cl.docs, cl.positive, *lambda);
            let ctx = ElsContext::new(sims, cl.positive)?;
            let p = losses::softmax(z);
            let value = losses::loss_value(&cfg.loss, &p, cl.positive, Some(&ctx))?;
            let grad = losses::loss_grad(&cfg.loss, z, cl.positive, Some(&ctx))?;
            Ok((value, grad))
        }
        spec => {
            let p = losses::softmax(z);
            let value = losses::loss_value(spec, &p, cl.positive, None)?;
            let grad = losses::loss_grad(spec, z, cl.positive, None)?;
            Ok((value, grad))
        }
    }
}

fn lw_targets(
    lw: &PossibilityParams,
    cl: &CandidateList,
    snapshot: Option<&ConfidenceSnapshot>,
) -> Result<AmbiguatedTargets> {
    match snapshot {
        None => AmbiguatedTargets::from_annotated(&cl.query_id, &[cl.positive], cl.len(), lw.alpha),
        Some(snap) => {
            let p = snap.probabilities_for(&cl.query_id, &cl.docs);
            weakening::build_possibility(lw, &cl.query_id, &[cl.positive], &p, snap.epoch)
        }
    }
}

/// Train a scorer on the bundle's training split.
pub fn train(bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let fmap = FeatureMap {
        dim: cfg.feat_dim,
        mode: cfg.feature_mode,
    };
    let docs_sparse: Vec<SparseVec> = bundle
        .corpus
        .docs()
        .iter()
        .map(|d| Ok(SparseVec::from_dense(&fmap.document_features(d)?)))
        .collect::<Result<_>>()?;
    let plans = build_query_plans(bundle, &fmap)?;
    let mut model = ScorerModel::init(cfg.arch, cfg.feat_dim, cfg.embed_dim, cfg.temperature, cfg.seed);

    let is_lw = matches!(cfg.loss, LossSpec::Lw(_));
    let is_els = matches!(cfg.loss, LossSpec::Els { .. });
    let rnn_k = match cfg.loss {
        LossSpec::Els { rnn_k, .. } => rnn_k,
        _ => 0,
    };

    // The similarity/mining index: model embeddings for bi-encoders, static
    // raw features for the joint scorer.
    let mut idx = if cfg.arch.has_embeddings() {
        rebuild_index(&model, &docs_sparse, &bundle.corpus, -1)?
    } else {
        EmbeddingIndex::from_features(&fmap, &bundle.corpus, -1)?
    };
    let joint_lists = if cfg.arch.has_embeddings() {
        Vec::new()
    } else {
        joint_candidate_lists(&plans, &idx, cfg)?
    };
    let mut table = is_els.then(|| NeighborTable::build(&idx, rnn_k));
    let mut snapshot: Option<ConfidenceSnapshot> = None;

    let mut adam = AdamState {
        m: vec![0.0; model.params.len()],
        v: vec![0.0; model.params.len()],
        t: 0,
    };
    let mut logs = Vec::with_capacity(cfg.epochs);
    let query_features: HashMap<&str, &SparseVec> = plans
        .iter()
        .map(|p| (p.query_id.as_str(), &p.features))
        .collect();

    for epoch in 0..cfg.epochs {
        let snapshot_epoch_used = if is_lw {
            Some(snapshot.as_ref().map(|s| s.epoch).unwrap_or(-1))
        } else {
            None
        };
        debug_assert!(snapshot_epoch_used.unwrap_or(-1) < epoch as i64);

        let batches = if cfg.arch.has_embeddings() {
            make_batches(bundle, &model, &fmap, &idx, cfg, epoch)?
        } else {
            // Joint: fixed lists, shuffled into seeded batches.
            let mut order: Vec<usize> = (0..plans.len()).collect();
            let mut rng = seeding::rng_for(cfg.seed, TAG_BATCH, epoch as u64);
            seeding::shuffle(&mut order, &mut rng);
            order
                .chunks(cfg.batch_size)
                .map(|chunk| {
                    chunk
                        .iter()
                        .filter_map(|&qi| joint_lists[qi].clone())
                        .collect::<Vec<_>>()
                })
                .filter(|b: &Vec<CandidateList>| !b.is_empty())
                .collect()
        };

        let mut epoch_loss = 0.0;
        let mut epoch_queries = 0usize;
        let mut hist = BTreeMap::new();
        let mut grad_acc = vec![0.0; model.params.len()];

        for (batch_no, batch) in batches.iter().enumerate() {
            grad_acc.iter_mut().for_each(|g| *g = 0.0);
            let mut contributed = 0usize;
            for cl in batch {
                let qx = *query_features
                    .get(cl.query_id.as_str())
                    .expect("candidate lists come from the training split");
                let cand_features: Vec<&SparseVec> =
                    cl.docs.iter().map(|&d| &docs_sparse[d]).collect();
                let (acts, z) =
                    model
                        .score_candidates(qx, &cand_features)
                        .map_err(|e| Error::TrainAbort {
                            epoch,
                            batch: batch_no,
                            query_id: cl.query_id.clone(),
                            msg: e.to_string(),
                        })?;
                let (value, dz) =
                    query_loss(cfg, cl, &z, snapshot.as_ref(), &idx, table.as_ref(), &mut hist)?;
                if !value.is_finite() {
                    return Err(Error::TrainAbort {
                        epoch,
                        batch: batch_no,
                        query_id: cl.query_id.clone(),
                        msg: format!("non-finite loss {value}"),
                    });
                }
                model.accumulate_chain_grads(qx, &cand_features, &acts, &dz, &mut grad_acc)?;
                epoch_loss += value;
                contributed += 1;
            }
            if contributed == 0 {
                continue;
            }
            // Average over queries so the learning rate is batch-size-free.
            let inv = 1.0 / contributed as f64;
            grad_acc.iter_mut().for_each(|g| *g *= inv);
            apply_update(cfg, &mut model, &grad_acc, &mut adam);
            epoch_queries += contributed;
        }

        // Epoch boundary: re-index under the frozen parameters, then refresh
        // the confidence snapshot from the new index.
        let rebuild_start = Instant::now();
        let mut rebuild_ms = 0;
        if cfg.arch.has_embeddings() {
            idx = rebuild_index(&model, &docs_sparse, &bundle.corpus, epoch as i64)?;
            if is_els {
                table = Some(NeighborTable::build(&idx, rnn_k));
            }
            rebuild_ms = rebuild_start.elapsed().as_millis();
        }
        if is_lw {
            snapshot = Some(if cfg.arch.has_embeddings() {
                // The index rows are the frozen doc embeddings, so the top-K
                // scores divided by the temperature are exactly the scores
                // refresh_snapshot would recompute.
                let entries = plans
                    .iter()
                    .map(|p| {
                        let qe = model.embed_sparse(&p.features, Side::Query)?;
                        let top = index::top_k(&idx, &qe, cfg.snapshot_top_k);
                        let z: Vec<f64> =
                            top.scores.iter().map(|s| s / cfg.temperature).collect();
                        let probs = losses::softmax(&z);
                        Ok((
                            p.query_id.clone(),
                            top.indices.into_iter().zip(probs).collect(),
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ConfidenceSnapshot::from_entries(epoch as i64, entries)
            } else {
                let queries: Vec<&crate::dataset::Query> =
                    bundle.train.queries.queries().iter().collect();
                let lists: Vec<Vec<usize>> = joint_lists
                    .iter()
                    .map(|cl| cl.as_ref().map(|c| c.docs.clone()).unwrap_or_default())
                    .collect();
                weakening::refresh_snapshot(
                    &model,
                    &fmap,
                    &bundle.corpus,
                    &queries,
                    &lists,
                    epoch as i64,
                )?
            });
        }

        logs.push(EpochLog {
            epoch,
            mean_loss: if epoch_queries > 0 {
                epoch_loss / epoch_queries as f64
            } else {
                0.0
            },
            rebuild_ms,
            param_checksum: param_checksum(&model.params),
            snapshot_epoch_used,
            r_star_hist: is_lw.then_some(hist),
        });
    }

    Ok(TrainOutcome { model, epochs: logs })
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMetric {
    RecallAt10,
    Mrr,
}

#[derive(Debug, Clone)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub settings: Vec<(String, f64)>,
    pub config: TrainConfig,
    pub metric: f64,
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub best_index: usize,
    pub best_config: TrainConfig,
    pub best_loss: LossSpec,
    pub cells: Vec<GridCell>,
}

/// Apply one dotted grid key (`loss.g`, `lw.beta`, `train.learning_rate`)
/// to a config.
fn apply_grid_setting(cfg: &TrainConfig, key: &str, value: f64) -> Result<TrainConfig> {
    let mut out = cfg.clone();
    if let Some(hyper) = key.strip_prefix("loss.").or_else(|| key.strip_prefix("lw.")) {
        out.loss = cfg.loss.with_hyper(hyper, value)?;
        return Ok(out);
    }
    match key {
        "train.learning_rate" => out.learning_rate = value,
        "train.epochs" => out.epochs = value as usize,
        "train.batch_size" => out.batch_size = value as usize,
        "train.temperature" => out.temperature = value,
        "train.n_hard_negatives" => out.n_hard_negatives = value as usize,
        other => {
            return Err(Error::Config(format!("unknown grid key {other:?}")));
        }
    }
    Ok(out)
}

/// Train one model per grid cell with a shared seed, evaluate each on the
/// validation split, and return the argmax cell (ties keep the earliest in
/// declared grid order) plus the full table.
pub fn grid_search(
    bundle: &DatasetBundle,
    base: &TrainConfig,
    grids: &[GridAxis],
    metric: ValidationMetric,
) -> Result<GridSearchOutcome> {
    if grids.is_empty() || grids.iter().any(|g| g.values.is_empty()) {
        return Err(Error::Invalid("grid search needs non-empty grids".into()));
    }
    if bundle.validation.queries.is_empty() {
        return Err(Error::Invalid("grid search needs a validation split".into()));
    }
    let mut cells = Vec::new();
    let mut counters = vec![0usize; grids.len()];
    loop {
        let settings: Vec<(String, f64)> = grids
            .iter()
            .zip(&counters)
            .map(|(axis, &i)| (axis.key.clone(), axis.values[i]))
            .collect();
        let mut cfg = base.clone();
        for (key, value) in &settings {
            cfg = apply_grid_setting(&cfg, key, *value)?;
        }
        let outcome = train(bundle, &cfg)?;
        let fmap = FeatureMap {
            dim: cfg.feat_dim,
            mode: cfg.feature_mode,
        };
        let eval = crate::eval::evaluate_split(
            &outcome.model,
            &fmap,
            &bundle.corpus,
            &bundle.validation,
            10,
        )?;
        let score = match metric {
            ValidationMetric::RecallAt10 => eval.recall,
            ValidationMetric::Mrr => eval.mrr,
        };
        cells.push(GridCell {
            settings,
            config: cfg,
            metric: score,
        });

        // Odometer: last axis fastest, first axis outermost.
        let mut pos = grids.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            counters[pos] += 1;
            if counters[pos] < grids[pos].values.len() {
                break;
            }
            counters[pos] = 0;
            if pos == 0 {
                let mut best_index = 0;
                for (i, cell) in cells.iter().enumerate() {
                    if cell.metric > cells[best_index].metric {
                        best_index = i;
                    }
                }
                let best = &cells[best_index];
                return Ok(GridSearchOutcome {
                    best_index,
                    best_config: best.config.clone(),
                    best_loss: best.config.loss.clone(),
                    cells,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::weakening::PairLoss;

    fn small_bundle() -> DatasetBundle {
        generate_synthetic(&SyntheticSpec {
            n_docs: 60,
            n_queries: 40,
            n_clusters: 2,
            vocab_size: 120,
            seed: 31,
        })
        .unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            feat_dim: 64,
            embed_dim: 8,
            negative_sample_pool: 100,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initial_parameters() {
        let bundle = small_bundle();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_config()
        };
        let outcome = train(&bundle, &cfg).unwrap();
        let init = ScorerModel::init(cfg.arch, cfg.feat_dim, cfg.embed_dim, cfg.temperature, cfg.seed);
        assert_eq!(outcome.model.params, init.params);
    }

    #[test]
    fn ce_loss_decreases_on_separable_clusters() {
        let bundle = small_bundle();
        let cfg = TrainConfig {
            epochs: 10,
            ..small_config()
        };
        let outcome = train(&bundle, &cfg).unwrap();
        let losses: Vec<f64> = outcome.epochs.iter().map(|e| e.mean_loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss did not decrease: {losses:?}");
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let bundle = small_bundle();
        let cfg = small_config();
        let a = train(&bundle, &cfg).unwrap();
        let b = train(&bundle, &cfg).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.epochs, b.epochs);
    }

    #[test]
    fn batches_are_identical_for_same_seed_and_epoch() {
        let bundle = small_bundle();
        let cfg = small_config();
        let fmap = FeatureMap::hashed(cfg.feat_dim);
        let model = ScorerModel::init(cfg.arch, cfg.feat_dim, cfg.embed_dim, 1.0, cfg.seed);
        let idx = EmbeddingIndex::build(&model, &fmap, &bundle.corpus, -1).unwrap();
        let a = make_batches(&bundle, &model, &fmap, &idx, &cfg, 2).unwrap();
        let b = make_batches(&bundle, &model, &fmap, &idx, &cfg, 2).unwrap();
        assert_eq!(a, b);
        let c = make_batches(&bundle, &model, &fmap, &idx, &cfg, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn candidate_lists_hold_positive_once_and_respect_bounds() {
        let bundle = small_bundle();
        let cfg = small_config();
        let fmap = FeatureMap::hashed(cfg.feat_dim);
        let model = ScorerModel::init(cfg.arch, cfg.feat_dim, cfg.embed_dim, 1.0, cfg.seed);
        let idx = EmbeddingIndex::build(&model, &fmap, &bundle.corpus, -1).unwrap();
        let batches = make_batches(&bundle, &model, &fmap, &idx, &cfg, 0).unwrap();
        for batch in &batches {
            for cl in batch {
                assert!(cl.len() >= 2);
                assert!(cl.len() <= cfg.batch_size + cfg.n_hard_negatives);
                // Deduplicated: every doc appears once.
                let unique: HashSet<usize> = cl.docs.iter().copied().collect();
                assert_eq!(unique.len(), cl.len());
                assert_eq!(cl.positive, 0);
                let pos_doc = cl.docs[0];
                let relevant = bundle.train.judgments.relevant(&cl.query_id).unwrap();
                assert!(relevant.contains(bundle.corpus.doc(pos_doc).doc_id.as_str()));
            }
        }
    }

    #[test]
    fn lw_at_beta_one_matches_pairwise_trajectory_bitwise() {
        let bundle = small_bundle();
        let lw_cfg = TrainConfig {
            loss: LossSpec::Lw(PossibilityParams {
                beta: 1.0,
                ..PossibilityParams::default()
            }),
            ..small_config()
        };
        let pw_cfg = TrainConfig {
            loss: LossSpec::Pairwise(PairLoss::Logistic),
            ..small_config()
        };
        let a = train(&bundle, &lw_cfg).unwrap();
        let b = train(&bundle, &pw_cfg).unwrap();
        assert_eq!(a.model.params, b.model.params);
        for (ea, eb) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!(ea.param_checksum, eb.param_checksum, "epoch {}", ea.epoch);
            assert_eq!(ea.mean_loss.to_bits(), eb.mean_loss.to_bits());
        }
    }

    #[test]
    fn lw_snapshot_discipline() {
        let bundle = small_bundle();
        let cfg = TrainConfig {
            loss: LossSpec::Lw(PossibilityParams::default()),
            epochs: 4,
            ..small_config()
        };
        let outcome = train(&bundle, &cfg).unwrap();
        for log in &outcome.epochs {
            let used = log.snapshot_epoch_used.unwrap();
            assert_eq!(used, log.epoch as i64 - 1);
            assert!(log.r_star_hist.is_some());
        }
    }

    #[test]
    fn joint_arch_trains_on_fixed_lists() {
        let bundle = small_bundle();
        let cfg = TrainConfig {
            arch: Arch::Joint,
            epochs: 2,
            embed_dim: 4,
            feat_dim: 64,
            ..small_config()
        };
        let outcome = train(&bundle, &cfg).unwrap();
        assert_eq!(outcome.epochs.len(), 2);
        // No index rebuild for the joint path.
        assert!(outcome.epochs.iter().all(|e| e.rebuild_ms == 0));
    }

    #[test]
    fn full_chain_gradient_matches_finite_differences() {
        let bundle = small_bundle();
        let cfg = small_config();
        let fmap = FeatureMap::hashed(cfg.feat_dim);
        let model = ScorerModel::init(cfg.arch, cfg.feat_dim, cfg.embed_dim, 1.0, cfg.seed);
        let idx = EmbeddingIndex::build(&model, &fmap, &bundle.corpus, -1).unwrap();
        let batches = make_batches(&bundle, &model, &fmap, &idx, &cfg, 0).unwrap();
        let cl = &batches[0][0];
        let query = bundle
            .train
            .queries
            .queries()
            .iter()
            .find(|q| q.query_id == cl.query_id)
            .unwrap();
        let qx = fmap.query_features(query).unwrap();
        let doc_feats: Vec<Vec<f64>> = cl
            .docs
            .iter()
            .map(|&d| fmap.document_features(bundle.corpus.doc(d)).unwrap())
            .collect();

        let loss_at = |m: &ScorerModel| -> f64 {
            let z: Vec<f64> = doc_feats
                .iter()
                .map(|dx| m.score_features(&qx, dx).unwrap())
                .collect();
            let p = losses::softmax(&z);
            losses::loss_value(&LossSpec::Ce, &p, cl.positive, None).unwrap()
        };

        // Analytic: chain loss grad through per-candidate score grads.
        let z: Vec<f64> = doc_feats
            .iter()
            .map(|dx| model.score_features(&qx, dx).unwrap())
            .collect();
        let dz = losses::loss_grad(&LossSpec::Ce, &z, cl.positive, None).unwrap();
        let mut analytic = vec![0.0; model.params.len()];
        for (coef, dx) in dz.iter().zip(&doc_feats) {
            let sg = model.score_with_grad_features(&qx, dx).unwrap();
            for (a, g) in analytic.iter_mut().zip(&sg.grad) {
                *a += coef * g;
            }
        }

        let mut rng = crate::seeding::rng_for(77, 0x99, 0);
        use rand::Rng as _;
        for _ in 0..20 {
            let coord = (rng.gen::<u64>() % model.params.len() as u64) as usize;
            let h = 1e-5;
            let mut probe = model.clone();
            probe.params[coord] += h;
            let up = loss_at(&probe);
            probe.params[coord] -= 2.0 * h;
            let down = loss_at(&probe);
            let fd = (up - down) / (2.0 * h);
            let a = analytic[coord];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
            assert!(rel < 1e-3 || (a - fd).abs() < 1e-8, "coord {coord}: {a} vs {fd}");
        }
    }

    #[test]
    fn grid_search_singleton_returns_that_cell() {
        let bundle = small_bundle();
        let base = TrainConfig {
            epochs: 2,
            ..small_config()
        };
        let grids = [GridAxis {
            key: "loss.g".into(),
            values: vec![0.5],
        }];
        let base = TrainConfig {
            loss: LossSpec::Gce { g: 0.7 },
            ..base
        };
        let out = grid_search(&bundle, &base, &grids, ValidationMetric::RecallAt10).unwrap();
        assert_eq!(out.cells.len(), 1);
        assert_eq!(out.best_index, 0);
        assert_eq!(out.best_loss, LossSpec::Gce { g: 0.5 });
    }

    #[test]
    fn grid_search_prefers_trained_cell_over_sabotaged() {
        let bundle = small_bundle();
        let base = TrainConfig {
            epochs: 4,
            ..small_config()
        };
        let grids = [GridAxis {
            key: "train.learning_rate".into(),
            values: vec![0.01, 0.0],
        }];
        let out = grid_search(&bundle, &base, &grids, ValidationMetric::RecallAt10).unwrap();
        assert_eq!(out.cells.len(), 2);
        assert_eq!(out.best_index, 0);
        assert!(out.cells[0].metric > out.cells[1].metric);
    }

    #[test]
    fn grid_cell_count_is_the_product_of_axis_sizes() {
        let bundle = small_bundle();
        let base = TrainConfig {
            epochs: 1,
            loss: LossSpec::Gce { g: 0.7 },
            ..small_config()
        };
        let grids = [
            GridAxis {
                key: "loss.g".into(),
                values: vec![0.3, 0.7],
            },
            GridAxis {
                key: "train.learning_rate".into(),
                values: vec![0.01, 0.02, 0.03],
            },
        ];
        let out = grid_search(&bundle, &base, &grids, ValidationMetric::Mrr).unwrap();
        assert_eq!(out.cells.len(), 6);
        // Declared order: first axis outermost.
        assert_eq!(out.cells[0].settings[0].1, 0.3);
        assert_eq!(out.cells[0].settings[1].1, 0.01);
        assert_eq!(out.cells[1].settings[1].1, 0.02);
        assert_eq!(out.cells[3].settings[0].1, 0.7);
    }
}

//! Label weakening: possibility distributions, ambiguated target sets, and
//! the optimistic superset loss.
//!
//! Instead of committing to a single (possibly corrupted) positive, the
//! supervision becomes a set: the annotated positives plus every candidate
//! whose snapshot confidence reaches the threshold `beta`. The loss is the
//! minimum, over that set, of a pairwise ranking loss against everything
//! outside it, so the learner adopts the most favorable plausible positive.
//!
//! Two safeguards keep this from self-reinforcing: confidences come from a
//! snapshot recomputed only at epoch boundaries (never mid-epoch), and a
//! high `beta` keeps low-confidence candidates out of the set entirely.

use std::collections::HashMap;

use crate::dataset::{Corpus, Query};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::losses::softmax;
use crate::scorer::ScorerModel;

/// Pairwise ranking loss applied to (positive, negative) score pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairLoss {
    /// ln(1 + exp(-(s+ - s-)))
    Logistic,
    /// max(0, gamma - (s+ - s-))
    Margin { gamma: f64 },
}

impl PairLoss {
    pub fn value(&self, pos: f64, neg: f64) -> f64 {
        let d = pos - neg;
        match self {
            PairLoss::Logistic => softplus(-d),
            PairLoss::Margin { gamma } => (gamma - d).max(0.0),
        }
    }

    /// (d/d s+, d/d s-) of `value`.
    pub fn grad(&self, pos: f64, neg: f64) -> (f64, f64) {
        let d = pos - neg;
        match self {
            PairLoss::Logistic => {
                let g = -sigmoid(-d);
                (g, -g)
            }
            PairLoss::Margin { gamma } => {
                if gamma - d > 0.0 {
                    (-1.0, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// How negative pair terms are weighted in the superset loss.
///
/// The displayed loss does not consume `alpha` at all; the scaled variant is
/// an explicitly labeled extension and stays off by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeWeighting {
    Unweighted,
    ScaledByOneMinusAlpha,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PossibilityParams {
    /// Confidence threshold for augmenting the target set.
    pub beta: f64,
    /// Relaxation value assigned to non-members of the target set.
    pub alpha: f64,
    pub pair_loss: PairLoss,
    pub negative_weighting: NegativeWeighting,
}

impl Default for PossibilityParams {
    fn default() -> Self {
        PossibilityParams {
            beta: 0.9,
            alpha: 0.1,
            pair_loss: PairLoss::Logistic,
            negative_weighting: NegativeWeighting::Unweighted,
        }
    }
}

impl PossibilityParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("lw.beta must be in [0,1], got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("lw.alpha must be in [0,1), got {}", self.alpha)));
        }
        if let PairLoss::Margin { gamma } = self.pair_loss {
            if gamma <= 0.0 {
                return Err(Error::Config(format!("lw.gamma must be > 0, got {gamma}")));
            }
        }
        Ok(())
    }

    fn negative_weight(&self) -> f64 {
        match self.negative_weighting {
            NegativeWeighting::Unweighted => 1.0,
            NegativeWeighting::ScaledByOneMinusAlpha => 1.0 - self.alpha,
        }
    }
}

/// Set-valued supervision for one candidate list.
///
/// `pi[i]` is 1 exactly for members of `r_star`; everything else carries the
/// relaxation value alpha. `r_star` and `n_star` partition the candidate
/// indices and the annotated positives are always members of `r_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguatedTargets {
    pub query_id: String,
    pub pi: Vec<f64>,
    pub r_star: Vec<usize>,
    pub n_star: Vec<usize>,
    /// Epoch of the confidence snapshot that produced this (-1 when built
    /// from annotated labels alone).
    pub snapshot_epoch: i64,
}

impl AmbiguatedTargets {
    /// Annotated labels only, as if `beta > 1`: nothing is augmented.
    /// This is what epoch 0 uses, before any snapshot exists.
    pub fn from_annotated(
        query_id: &str,
        annotated: &[usize],
        len: usize,
        alpha: f64,
    ) -> Result<Self> {
        build_targets(query_id, annotated, len, alpha, -1, |_| false)
    }
}

/// Apply the possibility rule: a candidate is a plausible positive iff it is
/// annotated or its snapshot probability reaches `beta`. A probability equal
/// to `beta` is included (>= comparison).
pub fn build_possibility(
    params: &PossibilityParams,
    query_id: &str,
    annotated: &[usize],
    p: &[f64],
    snapshot_epoch: i64,
) -> Result<AmbiguatedTargets> {
    params.validate()?;
    build_targets(query_id, annotated, p.len(), params.alpha, snapshot_epoch, |i| {
        p[i] >= params.beta
    })
}

fn build_targets(
    query_id: &str,
    annotated: &[usize],
    len: usize,
    alpha: f64,
    snapshot_epoch: i64,
    augment: impl Fn(usize) -> bool,
) -> Result<AmbiguatedTargets> {
    if annotated.is_empty() {
        return Err(Error::Invalid(format!(
            "query {query_id:?}: supervision required, annotated set is empty"
        )));
    }
    if let Some(&bad) = annotated.iter().find(|&&i| i >= len) {
        return Err(Error::Invalid(format!(
            "query {query_id:?}: annotated index {bad} out of bounds for {len} candidates"
        )));
    }
    let mut pi = vec![alpha; len];
    let mut r_star = Vec::new();
    let mut n_star = Vec::new();
    for i in 0..len {
        if annotated.contains(&i) || augment(i) {
            pi[i] = 1.0;
            r_star.push(i);
        } else {
            n_star.push(i);
        }
    }
    Ok(AmbiguatedTargets {
        query_id: query_id.to_string(),
        pi,
        r_star,
        n_star,
        snapshot_epoch,
    })
}

/// Sum of weighted pair losses of one plausible positive against `n_star`.
/// Shared by the superset loss and the plain pairwise base loss so the
/// singleton reduction is bit-exact.
fn branch_value(z: &[f64], pos: usize, n_star: &[usize], params: &PossibilityParams) -> f64 {
    let w = params.negative_weight();
    let mut total = 0.0;
    for &j in n_star {
        total += w * params.pair_loss.value(z[pos], z[j]);
    }
    total
}

fn branch_grad_into(
    z: &[f64],
    pos: usize,
    n_star: &[usize],
    params: &PossibilityParams,
    grad: &mut [f64],
) {
    let w = params.negative_weight();
    for &j in n_star {
        let (dp, dn) = params.pair_loss.grad(z[pos], z[j]);
        grad[pos] += w * dp;
        grad[j] += w * dn;
    }
}

/// Index into `r_star` of the branch the optimistic min selects, ties broken
/// by the lowest candidate index. `None` when `n_star` is empty (loss 0).
pub fn selected_positive(
    targets: &AmbiguatedTargets,
    z: &[f64],
    params: &PossibilityParams,
) -> Result<Option<usize>> {
    if z.len() != targets.pi.len() {
        return Err(Error::Invalid(format!(
            "query {:?}: {} scores for {} candidates",
            targets.query_id,
            z.len(),
            targets.pi.len()
        )));
    }
    if targets.n_star.is_empty() {
        return Ok(None);
    }
    let mut best = targets.r_star[0];
    let mut best_value = branch_value(z, best, &targets.n_star, params);
    for &i in &targets.r_star[1..] {
        let v = branch_value(z, i, &targets.n_star, params);
        if v < best_value {
            best = i;
            best_value = v;
        }
    }
    Ok(Some(best))
}

/// The optimistic superset loss: min over plausible positives of the summed
/// pairwise loss against all non-members. Empty `n_star` contributes 0.
pub fn superset_loss(
    targets: &AmbiguatedTargets,
    z: &[f64],
    params: &PossibilityParams,
) -> Result<f64> {
    match selected_positive(targets, z, params)? {
        None => Ok(0.0),
        Some(pos) => Ok(branch_value(z, pos, &targets.n_star, params)),
    }
}

/// Subgradient of [`superset_loss`]: differentiate the selected branch and
/// leave non-selected members of `r_star` at zero.
pub fn superset_loss_grad(
    targets: &AmbiguatedTargets,
    z: &[f64],
    params: &PossibilityParams,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; z.len()];
    if let Some(pos) = selected_positive(targets, z, params)? {
        branch_grad_into(z, pos, &targets.n_star, params, &mut grad);
    }
    Ok(grad)
}

/// Plain pairwise ranking loss of the annotated positive against the given
/// negatives. This is the base loss the superset loss reduces to when
/// `r_star` is the annotated singleton.
pub fn pairwise_loss(
    z: &[f64],
    positive: usize,
    negatives: &[usize],
    params: &PossibilityParams,
) -> f64 {
    branch_value(z, positive, negatives, params)
}

pub fn pairwise_loss_grad(
    z: &[f64],
    positive: usize,
    negatives: &[usize],
    params: &PossibilityParams,
) -> Vec<f64> {
    let mut grad = vec![0.0; z.len()];
    branch_grad_into(z, positive, negatives, params, &mut grad);
    grad
}

// ---------------------------------------------------------------------------
// Confidence snapshots
// ---------------------------------------------------------------------------

/// Model confidences frozen at an epoch boundary: per query, a softmax over
/// that query's candidate list keyed by corpus doc index.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSnapshot {
    pub epoch: i64,
    per_query: HashMap<String, HashMap<usize, f64>>,
}

impl ConfidenceSnapshot {
    /// Assemble from precomputed per-query (doc, probability) lists, e.g.
    /// softmaxed top-K retrieval scores under the frozen end-of-epoch model.
    pub fn from_entries(
        epoch: i64,
        entries: impl IntoIterator<Item = (String, Vec<(usize, f64)>)>,
    ) -> Self {
        ConfidenceSnapshot {
            epoch,
            per_query: entries
                .into_iter()
                .map(|(q, probs)| (q, probs.into_iter().collect()))
                .collect(),
        }
    }

    /// Probability of `doc` for `query_id`; 0 for anything outside the
    /// snapshot's candidate list (below-threshold by construction).
    pub fn probability(&self, query_id: &str, doc: usize) -> f64 {
        self.per_query
            .get(query_id)
            .and_then(|m| m.get(&doc))
            .copied()
            .unwrap_or(0.0)
    }

    /// Probabilities aligned with an arbitrary candidate list.
    pub fn probabilities_for(&self, query_id: &str, docs: &[usize]) -> Vec<f64> {
        docs.iter().map(|&d| self.probability(query_id, d)).collect()
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.per_query.contains_key(query_id)
    }
}

/// Score every (query, candidate) pair under the frozen model and store the
/// per-query softmax, stamped with the completed epoch. Pure: calling twice
/// without parameter updates yields identical snapshots.
pub fn refresh_snapshot(
    model: &ScorerModel,
    fmap: &FeatureMap,
    corpus: &Corpus,
    queries: &[&Query],
    candidate_lists: &[Vec<usize>],
    epoch: i64,
) -> Result<ConfidenceSnapshot> {
    if queries.len() != candidate_lists.len() {
        return Err(Error::Invalid(format!(
            "{} queries with {} candidate lists",
            queries.len(),
            candidate_lists.len()
        )));
    }
    let mut per_query = HashMap::with_capacity(queries.len());
    for (query, docs) in queries.iter().zip(candidate_lists) {
        let qx = fmap.query_features(query)?;
        // Embedding archs share the query tower output across candidates.
        let query_embed = match model.arch.has_embeddings() {
            true => Some(model.embed_features(&qx, crate::scorer::Side::Query)?),
            false => None,
        };
        let mut scores = Vec::with_capacity(docs.len());
        for &d in docs {
            let dx = fmap.document_features(corpus.doc(d))?;
            let score = match &query_embed {
                Some(eq) => {
                    let ed = model.embed_features(&dx, crate::scorer::Side::Doc)?;
                    crate::features::dot(eq, &ed) / model.temperature
                }
                None => model.score_features(&qx, &dx)?,
            };
            scores.push(score);
        }
        let probs = softmax(&scores);
        let map: HashMap<usize, f64> = docs.iter().copied().zip(probs).collect();
        per_query.insert(query.query_id.clone(), map);
    }
    Ok(ConfidenceSnapshot { epoch, per_query })
}

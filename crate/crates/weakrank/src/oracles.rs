//! Brute-force reference implementations used only by tests.
//!
//! Everything here is a deliberately naive re-derivation: repeated max scans
//! instead of sorts, literal double loops instead of the production code
//! paths, closed forms where the implementation evaluates a sum. The point
//! is independence — these functions share no algorithmic code with the
//! modules they check, so agreement is evidence, not tautology.

use std::collections::BTreeSet;

use crate::eval::QueryResult;
use crate::losses::{LossSpec, PROB_FLOOR};
use crate::weakening::PairLoss;

/// A single oracle-vs-candidate comparison.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub case_desc: String,
    pub reference: f64,
    pub candidate: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

impl OracleReport {
    pub fn new(case_desc: impl Into<String>, reference: f64, candidate: f64) -> Self {
        let abs_error = (reference - candidate).abs();
        let rel_error = abs_error / reference.abs().max(candidate.abs()).max(1e-12);
        OracleReport {
            case_desc: case_desc.into(),
            reference,
            candidate,
            abs_error,
            rel_error,
        }
    }
}

/// Top-k by repeated max scan (no sort), ties to the lowest index.
pub fn brute_topk(scores: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if taken[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) if scores[i] > scores[b] => best = Some(i),
                _ => {}
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

/// Central finite differences, coordinate by coordinate.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

/// Literal transcription of the superset loss: a double loop plus an
/// explicit min, no shared helpers, no numeric shortcuts.
pub fn naive_superset_loss(r_star: &[usize], n_star: &[usize], z: &[f64], pair: PairLoss) -> f64 {
    if n_star.is_empty() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for &i in r_star {
        let mut total = 0.0;
        for &j in n_star {
            let d = z[i] - z[j];
            total += match pair {
                PairLoss::Logistic => (1.0 + (-d).exp()).ln(),
                PairLoss::Margin { gamma } => {
                    if gamma - d > 0.0 {
                        gamma - d
                    } else {
                        0.0
                    }
                }
            };
        }
        if total < best {
            best = total;
        }
    }
    best
}

/// Recall@k by direct rank enumeration.
pub fn naive_recall_at_k(results: &[QueryResult], k: usize) -> f64 {
    let mut hits = 0usize;
    for r in results {
        let mut found = false;
        for rank in 0..k.min(r.ranked.len()) {
            if r.relevant.contains(&r.ranked[rank]) {
                found = true;
                break;
            }
        }
        if found {
            hits += 1;
        }
    }
    hits as f64 / results.len() as f64
}

/// MRR by direct rank enumeration, zero beyond the cutoff.
pub fn naive_mrr(results: &[QueryResult], k_cap: usize) -> f64 {
    let mut total = 0.0;
    for r in results {
        for rank in 0..k_cap.min(r.ranked.len()) {
            if r.relevant.contains(&r.ranked[rank]) {
                total += 1.0 / (rank + 1) as f64;
                break;
            }
        }
    }
    total / results.len() as f64
}

/// Rank positions (1-based) of the first relevant document per query, used
/// to build hand-checkable metric cases.
pub fn first_relevant_ranks(results: &[QueryResult]) -> Vec<Option<usize>> {
    results
        .iter()
        .map(|r| {
            r.ranked
                .iter()
                .position(|d| r.relevant.contains(d))
                .map(|p| p + 1)
        })
        .collect()
}

fn naive_clamp(p: f64) -> f64 {
    if p < PROB_FLOOR {
        PROB_FLOOR
    } else {
        p
    }
}

/// Direct per-formula evaluation of the classification losses. LR uses the
/// closed form (the implementation evaluates the literal KL sum), so the two
/// routes are algebraically independent.
pub fn naive_loss_value(spec: &LossSpec, p: &[f64], y: usize, sim: Option<&[f64]>) -> f64 {
    let m = p.len();
    let ce = -naive_clamp(p[y]).ln();
    match spec {
        LossSpec::Ce => ce,
        LossSpec::Nce => {
            let mut den = 0.0;
            for &q in p {
                den -= naive_clamp(q).ln();
            }
            ce / den
        }
        LossSpec::Gce { g } => (1.0 - p[y].powf(*g)) / g,
        LossSpec::Agce { a, g } => ((a + 1.0).powf(*g) - (a + p[y]).powf(*g)) / g,
        LossSpec::Aul { a, r } => ((a - p[y]).powf(*r) - (a - 1.0).powf(*r)) / r,
        LossSpec::Ls { eps } => {
            let mut smooth = 0.0;
            for &q in p {
                smooth -= naive_clamp(q).ln();
            }
            (1.0 - eps) * ce + eps / m as f64 * smooth
        }
        LossSpec::Els { eps, .. } => {
            let sim = sim.expect("els oracle needs similarities");
            let mut denom = 0.0;
            for (i, &s) in sim.iter().enumerate() {
                if i != y {
                    denom += s;
                }
            }
            let mut total = -(1.0 - eps) * naive_clamp(p[y]).ln();
            for i in 0..m {
                if i == y {
                    continue;
                }
                let t = if denom > 0.0 {
                    eps * sim[i] / denom
                } else {
                    eps / (m as f64 - 1.0)
                };
                total -= t * naive_clamp(p[i]).ln();
            }
            total
        }
        LossSpec::Nagce { w1, w2, a, g } => {
            w1 * naive_loss_value(&LossSpec::Nce, p, y, None)
                + w2 * naive_loss_value(&LossSpec::Agce { a: *a, g: *g }, p, y, None)
        }
        LossSpec::Naul { w1, w2, a, r } => {
            w1 * naive_loss_value(&LossSpec::Nce, p, y, None)
                + w2 * naive_loss_value(&LossSpec::Aul { a: *a, r: *r }, p, y, None)
        }
        LossSpec::Lr { alpha_r } => {
            let py = p[y];
            if py >= 1.0 - alpha_r {
                0.0
            } else {
                // Closed form of KL(y_hat || p) for the projected target.
                let mut v = (1.0 - alpha_r) * ((1.0 - alpha_r) / naive_clamp(py)).ln();
                if *alpha_r > 0.0 {
                    v += alpha_r * (alpha_r / (1.0 - py)).ln();
                }
                v
            }
        }
        LossSpec::Lw(_) | LossSpec::Pairwise(_) => {
            panic!("set-valued losses have their own oracle: naive_superset_loss")
        }
    }
}

/// Helper for metric-oracle tests: build a result whose first relevant doc
/// sits at the given 1-based rank (or nowhere).
pub fn result_with_relevant_at(query_id: &str, n_ranked: usize, rank: Option<usize>) -> QueryResult {
    let ranked: Vec<String> = (0..n_ranked).map(|i| format!("d{i}")).collect();
    let mut relevant = BTreeSet::new();
    match rank {
        Some(r) => {
            relevant.insert(format!("d{}", r - 1));
        }
        None => {
            relevant.insert("absent".to_string());
        }
    }
    QueryResult {
        query_id: query_id.to_string(),
        ranked,
        relevant,
    }
}

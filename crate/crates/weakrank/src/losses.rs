//! The listwise loss zoo over a candidate softmax distribution.
//!
//! Each loss sees a probability vector `p = softmax(z)` over one query's
//! candidate list and the index `y` of the annotated positive. Values and
//! analytic gradients with respect to the raw scores `z` are provided for:
//! cross entropy (CE), normalized CE (NCE), generalized CE (GCE), asymmetric
//! generalized CE (AGCE), the unhinged-family loss (AUL), label smoothing
//! (LS), evidence-based label smoothing (ELS), the NCE+AGCE and NCE+AUL
//! combinations, and label relaxation (LR).
//!
//! Label weakening (LW) and the plain pairwise base loss are set-valued and
//! live in [`crate::weakening`]; asking this module to evaluate them is an
//! error.
//!
//! Probabilities inside logarithms are clamped at [`PROB_FLOOR`] so log-based
//! losses degrade deterministically instead of propagating NaN.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::weakening::{NegativeWeighting, PairLoss, PossibilityParams};

/// Floor applied to probabilities inside logarithms and their reciprocals.
pub const PROB_FLOOR: f64 = 1e-12;

/// One query's training candidates: corpus doc indices plus the position of
/// the annotated positive. Scores are computed at use, not stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateList {
    pub query_id: String,
    pub docs: Vec<usize>,
    /// Position of the annotated positive within `docs`.
    pub positive: usize,
}

impl CandidateList {
    pub fn new(query_id: impl Into<String>, docs: Vec<usize>, positive: usize) -> Result<Self> {
        if docs.len() < 2 {
            return Err(Error::Invalid(format!(
                "candidate list needs >= 2 entries, got {}",
                docs.len()
            )));
        }
        if positive >= docs.len() {
            return Err(Error::Invalid(format!(
                "positive index {positive} out of bounds for {} candidates",
                docs.len()
            )));
        }
        Ok(CandidateList {
            query_id: query_id.into(),
            docs,
            positive,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Per-candidate similarity to the annotated positive, in [0,1], with the
/// positive itself at 1 by convention. Drives ELS smoothing mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ElsContext {
    pub sim: Vec<f64>,
}

impl ElsContext {
    pub fn new(mut sim: Vec<f64>, positive: usize) -> Result<Self> {
        if positive >= sim.len() {
            return Err(Error::Invalid(format!(
                "positive index {positive} out of bounds for {} similarities",
                sim.len()
            )));
        }
        if let Some(bad) = sim.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Invalid(format!(
                "similarity {bad} outside [0,1]"
            )));
        }
        sim[positive] = 1.0;
        Ok(ElsContext { sim })
    }
}

/// Tagged loss choice plus hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    Ce,
    Nce,
    Gce { g: f64 },
    Agce { a: f64, g: f64 },
    Aul { a: f64, r: f64 },
    Ls { eps: f64 },
    Els { eps: f64, lambda: f64, rnn_k: usize },
    Nagce { w1: f64, w2: f64, a: f64, g: f64 },
    Naul { w1: f64, w2: f64, a: f64, r: f64 },
    Lr { alpha_r: f64 },
    Lw(PossibilityParams),
    /// Base pairwise ranking loss; the reduction target of LW at beta = 1.
    Pairwise(PairLoss),
}

impl LossSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LossSpec::Ce => "ce",
            LossSpec::Nce => "nce",
            LossSpec::Gce { .. } => "gce",
            LossSpec::Agce { .. } => "agce",
            LossSpec::Aul { .. } => "aul",
            LossSpec::Ls { .. } => "ls",
            LossSpec::Els { .. } => "els",
            LossSpec::Nagce { .. } => "nagce",
            LossSpec::Naul { .. } => "naul",
            LossSpec::Lr { .. } => "lr",
            LossSpec::Lw(_) => "lw",
            LossSpec::Pairwise(_) => "pairwise",
        }
    }

    /// Default hyperparameters per kind (the grid-search midpoints).
    pub fn default_for(kind: &str) -> Result<LossSpec> {
        match kind {
            "ce" => Ok(LossSpec::Ce),
            "nce" => Ok(LossSpec::Nce),
            "gce" => Ok(LossSpec::Gce { g: 0.7 }),
            "agce" => Ok(LossSpec::Agce { a: 1.5, g: 0.7 }),
            "aul" => Ok(LossSpec::Aul { a: 1.5, r: 1.0 }),
            "ls" => Ok(LossSpec::Ls { eps: 0.1 }),
            "els" => Ok(LossSpec::Els {
                eps: 0.1,
                lambda: 0.5,
                rnn_k: 10,
            }),
            "nagce" => Ok(LossSpec::Nagce {
                w1: 1.0,
                w2: 1.0,
                a: 1.5,
                g: 0.7,
            }),
            "naul" => Ok(LossSpec::Naul {
                w1: 1.0,
                w2: 1.0,
                a: 1.5,
                r: 1.0,
            }),
            "lr" => Ok(LossSpec::Lr { alpha_r: 0.1 }),
            "lw" => Ok(LossSpec::Lw(PossibilityParams::default())),
            "pairwise" => Ok(LossSpec::Pairwise(PairLoss::Logistic)),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            LossSpec::Ce | LossSpec::Nce => Ok(()),
            LossSpec::Gce { g } => {
                if *g > 0.0 && *g <= 1.0 {
                    Ok(())
                } else {
                    bad(format!("gce: g must be in (0,1], got {g}"))
                }
            }
            LossSpec::Agce { a, g } => {
                if *a > 0.0 && *g > 0.0 {
                    Ok(())
                } else {
                    bad(format!("agce: need a>0 and g>0, got a={a} g={g}"))
                }
            }
            LossSpec::Aul { a, r } => {
                if *a > 1.0 && *r > 0.0 {
                    Ok(())
                } else {
                    bad(format!("aul: need a>1 and r>0, got a={a} r={r}"))
                }
            }
            LossSpec::Ls { eps } => {
                if (0.0..1.0).contains(eps) {
                    Ok(())
                } else {
                    bad(format!("ls: eps must be in [0,1), got {eps}"))
                }
            }
            LossSpec::Els { eps, lambda, rnn_k } => {
                if !(0.0..1.0).contains(eps) {
                    bad(format!("els: eps must be in [0,1), got {eps}"))
                } else if !(0.0..=1.0).contains(lambda) {
                    bad(format!("els: lambda must be in [0,1], got {lambda}"))
                } else if *rnn_k == 0 {
                    bad("els: rnn_k must be >= 1".into())
                } else {
                    Ok(())
                }
            }
            LossSpec::Nagce { w1, w2, a, g } => {
                if *w1 <= 0.0 || *w2 <= 0.0 {
                    bad(format!("nagce: weights must be > 0, got w1={w1} w2={w2}"))
                } else {
                    LossSpec::Agce { a: *a, g: *g }.validate()
                }
            }
            LossSpec::Naul { w1, w2, a, r } => {
                if *w1 <= 0.0 || *w2 <= 0.0 {
                    bad(format!("naul: weights must be > 0, got w1={w1} w2={w2}"))
                } else {
                    LossSpec::Aul { a: *a, r: *r }.validate()
                }
            }
            LossSpec::Lr { alpha_r } => {
                if (0.0..1.0).contains(alpha_r) {
                    Ok(())
                } else {
                    bad(format!("lr: alpha_r must be in [0,1), got {alpha_r}"))
                }
            }
            LossSpec::Lw(p) => p.validate(),
            LossSpec::Pairwise(PairLoss::Margin { gamma }) => {
                if *gamma > 0.0 {
                    Ok(())
                } else {
                    bad(format!("pairwise: gamma must be > 0, got {gamma}"))
                }
            }
            LossSpec::Pairwise(PairLoss::Logistic) => Ok(()),
        }
    }

    /// Serialize to experiment-config entries (`loss.kind`, `loss.<hyper>`).
    pub fn to_config_entries(&self) -> Vec<(String, String)> {
        let mut out = vec![("loss.kind".to_string(), self.kind().to_string())];
        let mut push = |k: &str, v: String| out.push((format!("loss.{k}"), v));
        match self {
            LossSpec::Ce | LossSpec::Nce => {}
            LossSpec::Gce { g } => push("g", g.to_string()),
            LossSpec::Agce { a, g } => {
                push("a", a.to_string());
                push("g", g.to_string());
            }
            LossSpec::Aul { a, r } => {
                push("a", a.to_string());
                push("r", r.to_string());
            }
            LossSpec::Ls { eps } => push("eps", eps.to_string()),
            LossSpec::Els { eps, lambda, rnn_k } => {
                push("eps", eps.to_string());
                push("lambda", lambda.to_string());
                push("rnn_k", rnn_k.to_string());
            }
            LossSpec::Nagce { w1, w2, a, g } => {
                push("w1", w1.to_string());
                push("w2", w2.to_string());
                push("a", a.to_string());
                push("g", g.to_string());
            }
            LossSpec::Naul { w1, w2, a, r } => {
                push("w1", w1.to_string());
                push("w2", w2.to_string());
                push("a", a.to_string());
                push("r", r.to_string());
            }
            LossSpec::Lr { alpha_r } => push("alpha_r", alpha_r.to_string()),
            LossSpec::Lw(p) => {
                push("beta", p.beta.to_string());
                push("alpha", p.alpha.to_string());
                match p.pair_loss {
                    PairLoss::Logistic => push("pair_loss", "logistic".into()),
                    PairLoss::Margin { gamma } => {
                        push("pair_loss", "margin".into());
                        push("gamma", gamma.to_string());
                    }
                }
                push(
                    "neg_weighting",
                    match p.negative_weighting {
                        NegativeWeighting::Unweighted => "unweighted".into(),
                        NegativeWeighting::ScaledByOneMinusAlpha => "scaled".into(),
                    },
                );
            }
            LossSpec::Pairwise(pair) => match pair {
                PairLoss::Logistic => push("pair_loss", "logistic".into()),
                PairLoss::Margin { gamma } => {
                    push("pair_loss", "margin".into());
                    push("gamma", gamma.to_string());
                }
            },
        }
        out
    }

    /// Build from a kind name plus hyper entries; unknown keys are rejected.
    pub fn from_config(kind: &str, hypers: &BTreeMap<String, String>) -> Result<LossSpec> {
        let mut spec = LossSpec::default_for(kind)?;
        for (key, value) in hypers {
            spec = spec.with_hyper_str(key, value)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Override one named hyperparameter; errors on keys the kind lacks.
    pub fn with_hyper(&self, key: &str, value: f64) -> Result<LossSpec> {
        self.with_hyper_str(key, &value.to_string())
    }

    pub fn with_hyper_str(&self, key: &str, value: &str) -> Result<LossSpec> {
        let f = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("loss.{key}: not a number: {value:?}")))
        };
        let unknown = || -> Result<LossSpec> {
            Err(Error::Config(format!(
                "loss kind {:?} has no hyperparameter {key:?}",
                self.kind()
            )))
        };
        let mut spec = self.clone();
        match (&mut spec, key) {
            (LossSpec::Gce { g }, "g") => *g = f()?,
            (LossSpec::Agce { a, .. }, "a") => *a = f()?,
            (LossSpec::Agce { g, .. }, "g") => *g = f()?,
            (LossSpec::Aul { a, .. }, "a") => *a = f()?,
            (LossSpec::Aul { r, .. }, "r") => *r = f()?,
            (LossSpec::Ls { eps }, "eps") => *eps = f()?,
            (LossSpec::Els { eps, .. }, "eps") => *eps = f()?,
            (LossSpec::Els { lambda, .. }, "lambda") => *lambda = f()?,
            (LossSpec::Els { rnn_k, .. }, "rnn_k") => {
                *rnn_k = value
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("loss.rnn_k: not an integer: {value:?}")))?
            }
            (LossSpec::Nagce { w1, .. }, "w1") => *w1 = f()?,
            (LossSpec::Nagce { w2, .. }, "w2") => *w2 = f()?,
            (LossSpec::Nagce { a, .. }, "a") => *a = f()?,
            (LossSpec::Nagce { g, .. }, "g") => *g = f()?,
            (LossSpec::Naul { w1, .. }, "w1") => *w1 = f()?,
            (LossSpec::Naul { w2, .. }, "w2") => *w2 = f()?,
            (LossSpec::Naul { a, .. }, "a") => *a = f()?,
            (LossSpec::Naul { r, .. }, "r") => *r = f()?,
            (LossSpec::Lr { alpha_r }, "alpha_r") => *alpha_r = f()?,
            (LossSpec::Lw(p), "beta") => p.beta = f()?,
            (LossSpec::Lw(p), "alpha") => p.alpha = f()?,
            (LossSpec::Lw(p), "gamma") => {
                p.pair_loss = PairLoss::Margin { gamma: f()? };
            }
            (LossSpec::Lw(p), "pair_loss") => {
                p.pair_loss = parse_pair_loss(value, &p.pair_loss)?;
            }
            (LossSpec::Lw(p), "neg_weighting") => {
                p.negative_weighting = match value {
                    "unweighted" => NegativeWeighting::Unweighted,
                    "scaled" => NegativeWeighting::ScaledByOneMinusAlpha,
                    other => {
                        return Err(Error::Config(format!(
                            "loss.neg_weighting: expected unweighted|scaled, got {other:?}"
                        )))
                    }
                };
            }
            (LossSpec::Pairwise(pair), "pair_loss") => {
                *pair = parse_pair_loss(value, pair)?;
            }
            (LossSpec::Pairwise(pair), "gamma") => {
                *pair = PairLoss::Margin { gamma: f()? };
            }
            _ => return unknown(),
        }
        Ok(spec)
    }
}

fn parse_pair_loss(value: &str, current: &PairLoss) -> Result<PairLoss> {
    match value {
        "logistic" => Ok(PairLoss::Logistic),
        "margin" => Ok(match current {
            PairLoss::Margin { gamma } => PairLoss::Margin { gamma: *gamma },
            PairLoss::Logistic => PairLoss::Margin { gamma: 1.0 },
        }),
        other => Err(Error::Config(format!(
            "pair_loss: expected logistic|margin, got {other:?}"
        ))),
    }
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    if z.is_empty() {
        return Vec::new();
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn clamped(p: f64) -> f64 {
    p.max(PROB_FLOOR)
}

fn check_inputs(spec: &LossSpec, m: usize, y: usize, ctx: Option<&ElsContext>) -> Result<()> {
    spec.validate()?;
    if y >= m {
        return Err(Error::Invalid(format!(
            "positive index {y} out of bounds for {m} candidates"
        )));
    }
    match spec {
        LossSpec::Els { .. } => {
            let ctx = ctx.ok_or_else(|| {
                Error::Invalid("els requires a similarity context".into())
            })?;
            if ctx.sim.len() != m {
                return Err(Error::Invalid(format!(
                    "els similarity length {} does not match {m} candidates",
                    ctx.sim.len()
                )));
            }
        }
        LossSpec::Lw(_) | LossSpec::Pairwise(_) => {
            return Err(Error::Unsupported(format!(
                "{} is a set-valued ranking loss; evaluate it via the weakening module",
                spec.kind()
            )));
        }
        _ => {}
    }
    Ok(())
}

/// ELS target distribution: 1-eps on the positive, the remaining eps spread
/// over the off-positive candidates proportionally to their similarity
/// (uniform fallback when every off-positive similarity is zero).
fn els_targets(sim: &[f64], y: usize, eps: f64) -> Vec<f64> {
    let m = sim.len();
    let off_total: f64 = sim
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != y)
        .map(|(_, s)| s)
        .sum();
    let mut t = vec![0.0; m];
    t[y] = 1.0 - eps;
    for i in 0..m {
        if i == y {
            continue;
        }
        t[i] = if off_total > 0.0 {
            eps * sim[i] / off_total
        } else {
            eps / (m as f64 - 1.0)
        };
    }
    t
}

fn ce_value(p: &[f64], y: usize) -> f64 {
    -clamped(p[y]).ln()
}

fn nce_value(p: &[f64], y: usize) -> f64 {
    let num = -clamped(p[y]).ln();
    let den: f64 = p.iter().map(|&q| -clamped(q).ln()).sum();
    num / den
}

fn agce_value(p: f64, a: f64, g: f64) -> f64 {
    ((a + 1.0).powf(g) - (a + p).powf(g)) / g
}

fn aul_value(p: f64, a: f64, r: f64) -> f64 {
    ((a - p).powf(r) - (a - 1.0).powf(r)) / r
}

/// Label relaxation: zero when the positive already carries 1-alpha_r of the
/// mass; otherwise the KL divergence from the projected target
/// (1-alpha_r on the positive, alpha_r spread as alpha_r * p_k / (1 - p_y)).
/// Implemented as the literal KL sum; the oracle module carries the closed
/// form as an independent route.
fn lr_value(p: &[f64], y: usize, alpha_r: f64) -> f64 {
    let py = p[y];
    if py >= 1.0 - alpha_r {
        return 0.0;
    }
    let mut kl = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        let t = if k == y {
            1.0 - alpha_r
        } else {
            alpha_r * pk / (1.0 - py)
        };
        if t > 0.0 {
            kl += t * (t / clamped(pk)).ln();
        }
    }
    kl
}

/// Loss value for a probability vector `p` and positive index `y`.
pub fn loss_value(
    spec: &LossSpec,
    p: &[f64],
    y: usize,
    ctx: Option<&ElsContext>,
) -> Result<f64> {
    check_inputs(spec, p.len(), y, ctx)?;
    let m = p.len() as f64;
    Ok(match spec {
        LossSpec::Ce => ce_value(p, y),
        LossSpec::Nce => nce_value(p, y),
        LossSpec::Gce { g } => (1.0 - p[y].powf(*g)) / g,
        LossSpec::Agce { a, g } => agce_value(p[y], *a, *g),
        LossSpec::Aul { a, r } => aul_value(p[y], *a, *r),
        LossSpec::Ls { eps } => {
            let smooth: f64 = p.iter().map(|&q| -clamped(q).ln()).sum();
            (1.0 - eps) * ce_value(p, y) + eps / m * smooth
        }
        LossSpec::Els { eps, .. } => {
            let t = els_targets(&ctx.unwrap().sim, y, *eps);
            t.iter()
                .zip(p)
                .map(|(&tk, &pk)| -tk * clamped(pk).ln())
                .sum()
        }
        LossSpec::Nagce { w1, w2, a, g } => w1 * nce_value(p, y) + w2 * agce_value(p[y], *a, *g),
        LossSpec::Naul { w1, w2, a, r } => w1 * nce_value(p, y) + w2 * aul_value(p[y], *a, *r),
        LossSpec::Lr { alpha_r } => lr_value(p, y, *alpha_r),
        LossSpec::Lw(_) | LossSpec::Pairwise(_) => unreachable!("rejected by check_inputs"),
    })
}

/// d(value)/dp per kind. Where the value clamps a probability, the clamped
/// region is constant so its derivative is zero (keeps finite differences of
/// the implemented function consistent).
fn dvalue_dp(spec: &LossSpec, p: &[f64], y: usize, ctx: Option<&ElsContext>) -> Vec<f64> {
    let m = p.len();
    // Derivative of ln(clamped(p)): 1/p above the floor, 0 inside it.
    let dln = |q: f64| if q > PROB_FLOOR { 1.0 / q } else { 0.0 };
    let nce_grad = |out: &mut [f64], w: f64| {
        let a_num = -clamped(p[y]).ln();
        let b_den: f64 = p.iter().map(|&q| -clamped(q).ln()).sum();
        for (i, gi) in out.iter_mut().enumerate() {
            let da = if i == y { -dln(p[y]) } else { 0.0 };
            let db = -dln(p[i]);
            *gi += w * (da * b_den - a_num * db) / (b_den * b_den);
        }
    };
    let mut g = vec![0.0; m];
    match spec {
        LossSpec::Ce => g[y] = -dln(p[y]),
        LossSpec::Nce => nce_grad(&mut g, 1.0),
        LossSpec::Gce { g: gg } => g[y] = -p[y].powf(gg - 1.0),
        LossSpec::Agce { a, g: gg } => g[y] = -(a + p[y]).powf(gg - 1.0),
        LossSpec::Aul { a, r } => g[y] = -(a - p[y]).powf(r - 1.0),
        LossSpec::Ls { eps } => {
            g[y] = -(1.0 - eps) * dln(p[y]);
            for i in 0..m {
                g[i] += -eps / m as f64 * dln(p[i]);
            }
        }
        LossSpec::Els { eps, .. } => {
            let t = els_targets(&ctx.unwrap().sim, y, *eps);
            for i in 0..m {
                g[i] = -t[i] * dln(p[i]);
            }
        }
        LossSpec::Nagce { w1, w2, a, g: gg } => {
            nce_grad(&mut g, *w1);
            g[y] += -w2 * (a + p[y]).powf(gg - 1.0);
        }
        LossSpec::Naul { w1, w2, a, r } => {
            nce_grad(&mut g, *w1);
            g[y] += -w2 * (a - p[y]).powf(r - 1.0);
        }
        LossSpec::Lr { alpha_r } => {
            // The KL sum collapses to a function of p_y alone.
            let py = p[y];
            if py < 1.0 - alpha_r {
                g[y] = -(1.0 - alpha_r) / clamped(py) + alpha_r / (1.0 - py);
            }
        }
        LossSpec::Lw(_) | LossSpec::Pairwise(_) => unreachable!(),
    }
    g
}

/// Analytic gradient of `loss_value(spec, softmax(z), y, ctx)` w.r.t. `z`.
pub fn loss_grad(
    spec: &LossSpec,
    z: &[f64],
    y: usize,
    ctx: Option<&ElsContext>,
) -> Result<Vec<f64>> {
    check_inputs(spec, z.len(), y, ctx)?;
    let p = softmax(z);
    // CE through softmax has the standard closed form.
    if matches!(spec, LossSpec::Ce) {
        let mut g = p;
        g[y] -= 1.0;
        return Ok(g);
    }
    if let LossSpec::Lr { alpha_r } = spec {
        if p[y] >= 1.0 - alpha_r {
            return Ok(vec![0.0; z.len()]);
        }
    }
    let dp = dvalue_dp(spec, &p, y, ctx);
    let inner: f64 = p.iter().zip(&dp).map(|(&pi, &gi)| pi * gi).sum();
    Ok(p.iter()
        .zip(&dp)
        .map(|(&pj, &gj)| pj * (gj - inner))
        .collect())
}

//! Trainable scoring architectures with closed-form gradients.
//!
//! Three shapes of f(q, d):
//! - `DualTower`: separate query/document weight matrices; score is the dot
//!   product of the tanh tower outputs, divided by the temperature.
//! - `SharedTower`: one matrix for both sides (a parameter-tying restriction
//!   of the dual tower).
//! - `Joint`: a one-hidden-layer network over the concatenated query,
//!   document, and elementwise-product features; it scores pairs directly
//!   and has no per-document embedding.
//!
//! # Checkpoint byte layout
//!
//! All integers and floats little-endian:
//!
//! ```text
//! bytes 0..8     magic  b"WRNKCKP1"
//! byte  8        arch   0 = dual_tower, 1 = shared_tower, 2 = joint
//! bytes 9..16    zero padding
//! bytes 16..24   u64    feature dimension F
//! bytes 24..32   u64    embedding dimension E
//! bytes 32..40   f64    temperature
//! bytes 40..48   u64    parameter count P
//! bytes 48..     f64 x P  flat parameter array
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::dataset::{Document, Query};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, SparseVec};
use crate::seeding;

const CHECKPOINT_MAGIC: &[u8; 8] = b"WRNKCKP1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    DualTower,
    SharedTower,
    Joint,
}

impl Arch {
    pub fn name(&self) -> &'static str {
        match self {
            Arch::DualTower => "dual_tower",
            Arch::SharedTower => "shared_tower",
            Arch::Joint => "joint",
        }
    }

    fn code(&self) -> u8 {
        match self {
            Arch::DualTower => 0,
            Arch::SharedTower => 1,
            Arch::Joint => 2,
        }
    }

    fn from_code(code: u8) -> Result<Arch> {
        match code {
            0 => Ok(Arch::DualTower),
            1 => Ok(Arch::SharedTower),
            2 => Ok(Arch::Joint),
            other => Err(Error::Invalid(format!("unknown arch code {other}"))),
        }
    }

    /// Parameter count for feature dimension `f` and embedding dimension `e`.
    pub fn param_count(&self, f: usize, e: usize) -> usize {
        match self {
            Arch::DualTower => 2 * e * f,
            Arch::SharedTower => e * f,
            // hidden weights over [xq ; xd ; xq .* xd], bias, output vector
            Arch::Joint => e * 3 * f + e + e,
        }
    }

    pub fn has_embeddings(&self) -> bool {
        !matches!(self, Arch::Joint)
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Arch> {
        match s {
            "dual" | "dual_tower" => Ok(Arch::DualTower),
            "shared" | "shared_tower" => Ok(Arch::SharedTower),
            "joint" | "cross" => Ok(Arch::Joint),
            other => Err(Error::Config(format!("unknown arch {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Doc,
}

/// Score plus its gradient with respect to the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradient {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Forward state of one candidate-list scoring, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ChainActivations {
    query_embed: Option<Vec<f64>>,
    doc_embeds: Vec<Vec<f64>>,
    joint_hidden: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    pub arch: Arch,
    pub feat_dim: usize,
    pub embed_dim: usize,
    pub temperature: f64,
    pub params: Vec<f64>,
}

impl ScorerModel {
    /// Seeded init: every weight uniform in [-1/sqrt(F), 1/sqrt(F)].
    ///
    /// The dual tower starts with both towers tied to the same draw, the
    /// analogue of initializing both encoders from one checkpoint; they
    /// diverge during training. A small random matrix approximately
    /// preserves feature inner products, so a tied start scores overlapping
    /// texts similarly from the first epoch.
    pub fn init(arch: Arch, feat_dim: usize, embed_dim: usize, temperature: f64, seed: u64) -> Self {
        let scale = 1.0 / (feat_dim as f64).sqrt();
        let mut rng = seeding::rng_for(seed, 0x20, 0);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect()
        };
        let params = match arch {
            Arch::DualTower => {
                let tower = draw(embed_dim * feat_dim);
                let mut p = tower.clone();
                p.extend(tower);
                p
            }
            Arch::SharedTower => draw(embed_dim * feat_dim),
            Arch::Joint => draw(arch.param_count(feat_dim, embed_dim)),
        };
        ScorerModel {
            arch,
            feat_dim,
            embed_dim,
            temperature,
            params,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.arch.param_count(self.feat_dim, self.embed_dim);
        if self.params.len() != expected {
            return Err(Error::Invalid(format!(
                "{} expects {expected} parameters for F={} E={}, got {}",
                self.arch.name(),
                self.feat_dim,
                self.embed_dim,
                self.params.len()
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{} parameters", self.arch.name()),
            });
        }
        Ok(())
    }

    fn tower(&self, side: Side) -> &[f64] {
        let ef = self.embed_dim * self.feat_dim;
        match (self.arch, side) {
            (Arch::SharedTower, _) | (Arch::DualTower, Side::Query) => &self.params[..ef],
            (Arch::DualTower, Side::Doc) => &self.params[ef..2 * ef],
            (Arch::Joint, _) => unreachable!("joint has no towers"),
        }
    }

    fn tower_offset(&self, side: Side) -> usize {
        match (self.arch, side) {
            (Arch::SharedTower, _) | (Arch::DualTower, Side::Query) => 0,
            (Arch::DualTower, Side::Doc) => self.embed_dim * self.feat_dim,
            (Arch::Joint, _) => unreachable!(),
        }
    }

    fn check_features(&self, x: &[f64], what: &str) -> Result<()> {
        if x.len() != self.feat_dim {
            return Err(Error::Invalid(format!(
                "{what} feature length {} does not match F={}",
                x.len(),
                self.feat_dim
            )));
        }
        Ok(())
    }

    /// tanh(W_side x); unsupported for the joint scorer.
    pub fn embed_features(&self, x: &[f64], side: Side) -> Result<Vec<f64>> {
        if self.arch == Arch::Joint {
            return Err(Error::Unsupported(
                "joint scorer has no per-item embedding".into(),
            ));
        }
        self.check_features(x, "item")?;
        let w = self.tower(side);
        let f = self.feat_dim;
        let mut out = Vec::with_capacity(self.embed_dim);
        for i in 0..self.embed_dim {
            let row = &w[i * f..(i + 1) * f];
            out.push(crate::features::dot(row, x).tanh());
        }
        if !out.iter().all(|v| v.is_finite()) {
            let block = match (self.arch, side) {
                (Arch::SharedTower, _) => "shared tower weights",
                (_, Side::Query) => "query tower weights",
                (_, Side::Doc) => "doc tower weights",
            };
            return Err(Error::NonFinite {
                context: block.to_string(),
            });
        }
        Ok(out)
    }

    pub fn embed_query(&self, fmap: &FeatureMap, query: &Query) -> Result<Vec<f64>> {
        self.embed_features(&fmap.query_features(query)?, Side::Query)
    }

    pub fn embed_document(&self, fmap: &FeatureMap, doc: &Document) -> Result<Vec<f64>> {
        self.embed_features(&fmap.document_features(doc)?, Side::Doc)
    }

    pub fn score_features(&self, xq: &[f64], xd: &[f64]) -> Result<f64> {
        let value = match self.arch {
            Arch::DualTower | Arch::SharedTower => {
                let eq = self.embed_features(xq, Side::Query)?;
                let ed = self.embed_features(xd, Side::Doc)?;
                crate::features::dot(&eq, &ed) / self.temperature
            }
            Arch::Joint => self.joint_forward(xq, xd)?.2,
        };
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{} score", self.arch.name()),
            });
        }
        Ok(value)
    }

    pub fn score(&self, fmap: &FeatureMap, query: &Query, doc: &Document) -> Result<f64> {
        self.score_features(&fmap.query_features(query)?, &fmap.document_features(doc)?)
    }

    /// (hidden input u, hidden activations h, score) of the joint network.
    fn joint_forward(&self, xq: &[f64], xd: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        self.check_features(xq, "query")?;
        self.check_features(xd, "doc")?;
        let f = self.feat_dim;
        let e = self.embed_dim;
        let mut u = Vec::with_capacity(3 * f);
        u.extend_from_slice(xq);
        u.extend_from_slice(xd);
        u.extend(xq.iter().zip(xd).map(|(a, b)| a * b));
        let w = &self.params[..e * 3 * f];
        let b = &self.params[e * 3 * f..e * 3 * f + e];
        let v = &self.params[e * 3 * f + e..];
        let mut h = Vec::with_capacity(e);
        for i in 0..e {
            let row = &w[i * 3 * f..(i + 1) * 3 * f];
            h.push((crate::features::dot(row, &u) + b[i]).tanh());
        }
        let score = crate::features::dot(v, &h);
        if !score.is_finite() {
            return Err(Error::NonFinite {
                context: "joint network weights".into(),
            });
        }
        Ok((u, h, score))
    }

    /// Score together with its analytic gradient w.r.t. the parameters.
    pub fn score_with_grad_features(&self, xq: &[f64], xd: &[f64]) -> Result<ScoreGradient> {
        let mut grad = vec![0.0; self.params.len()];
        let f = self.feat_dim;
        let value = match self.arch {
            Arch::DualTower | Arch::SharedTower => {
                let eq = self.embed_features(xq, Side::Query)?;
                let ed = self.embed_features(xd, Side::Doc)?;
                let inv_t = 1.0 / self.temperature;
                let q_off = self.tower_offset(Side::Query);
                let d_off = self.tower_offset(Side::Doc);
                for i in 0..self.embed_dim {
                    let cq = ed[i] * (1.0 - eq[i] * eq[i]) * inv_t;
                    let cd = eq[i] * (1.0 - ed[i] * ed[i]) * inv_t;
                    let qrow = &mut grad[q_off + i * f..q_off + (i + 1) * f];
                    for (g, &x) in qrow.iter_mut().zip(xq) {
                        *g += cq * x;
                    }
                    let drow = &mut grad[d_off + i * f..d_off + (i + 1) * f];
                    for (g, &x) in drow.iter_mut().zip(xd) {
                        *g += cd * x;
                    }
                }
                crate::features::dot(&eq, &ed) * inv_t
            }
            Arch::Joint => {
                let (u, h, score) = self.joint_forward(xq, xd)?;
                let e = self.embed_dim;
                let v = &self.params[e * 3 * f + e..];
                for i in 0..e {
                    let c = v[i] * (1.0 - h[i] * h[i]);
                    let row = &mut grad[i * 3 * f..(i + 1) * 3 * f];
                    for (g, &uj) in row.iter_mut().zip(&u) {
                        *g = c * uj;
                    }
                    grad[e * 3 * f + i] = c; // bias
                    grad[e * 3 * f + e + i] = h[i]; // output vector
                }
                score
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{} score", self.arch.name()),
            });
        }
        Ok(ScoreGradient { value, grad })
    }

    pub fn score_with_grad(
        &self,
        fmap: &FeatureMap,
        query: &Query,
        doc: &Document,
    ) -> Result<ScoreGradient> {
        self.score_with_grad_features(&fmap.query_features(query)?, &fmap.document_features(doc)?)
    }

    // -- training fast path ---------------------------------------------------
    //
    // The per-pair `score_with_grad` materializes a full parameter-length
    // gradient per candidate; at training scale that is almost all allocation
    // traffic. The candidate-list variants below share the query activation,
    // walk only non-zero feature entries, and accumulate the chained gradient
    // in place. Summation order matches the dense path, so scores agree
    // bit-for-bit with `score_features` on count features.

    /// tanh(W_side x) over the non-zero entries of `x`.
    pub fn embed_sparse(&self, x: &SparseVec, side: Side) -> Result<Vec<f64>> {
        if self.arch == Arch::Joint {
            return Err(Error::Unsupported(
                "joint scorer has no per-item embedding".into(),
            ));
        }
        if x.dim() != self.feat_dim {
            return Err(Error::Invalid(format!(
                "feature length {} does not match F={}",
                x.dim(),
                self.feat_dim
            )));
        }
        let w = self.tower(side);
        let f = self.feat_dim;
        let mut pre = vec![0.0; self.embed_dim];
        for &(j, xj) in x.entries() {
            let j = j as usize;
            for (i, p) in pre.iter_mut().enumerate() {
                *p += w[i * f + j] * xj;
            }
        }
        Ok(pre.into_iter().map(f64::tanh).collect())
    }

    fn joint_sparse_input(xq: &SparseVec, xd: &SparseVec, f: usize) -> Vec<(u32, f64)> {
        let mut u: Vec<(u32, f64)> = Vec::with_capacity(xq.nnz() + xd.nnz() * 2);
        u.extend(xq.entries().iter().copied());
        u.extend(xd.entries().iter().map(|&(j, v)| (f as u32 + j, v)));
        // Elementwise product: intersect the two sorted support lists.
        let (mut a, b) = (xq.entries().iter().peekable(), xd.entries());
        let mut bi = 0;
        while let Some(&&(j, vq)) = a.peek() {
            while bi < b.len() && b[bi].0 < j {
                bi += 1;
            }
            if bi < b.len() && b[bi].0 == j {
                u.push((2 * f as u32 + j, vq * b[bi].1));
            }
            a.next();
        }
        u
    }

    /// Score one query against its candidate docs, returning the scores and
    /// the forward activations needed to backpropagate through them.
    pub fn score_candidates(
        &self,
        xq: &SparseVec,
        docs: &[&SparseVec],
    ) -> Result<(ChainActivations, Vec<f64>)> {
        match self.arch {
            Arch::DualTower | Arch::SharedTower => {
                let eq = self.embed_sparse(xq, Side::Query)?;
                let mut scores = Vec::with_capacity(docs.len());
                let mut doc_embeds = Vec::with_capacity(docs.len());
                for xd in docs {
                    let ed = self.embed_sparse(xd, Side::Doc)?;
                    scores.push(crate::features::dot(&eq, &ed) / self.temperature);
                    doc_embeds.push(ed);
                }
                if !scores.iter().all(|s| s.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("{} score", self.arch.name()),
                    });
                }
                Ok((
                    ChainActivations {
                        query_embed: Some(eq),
                        doc_embeds,
                        joint_hidden: Vec::new(),
                    },
                    scores,
                ))
            }
            Arch::Joint => {
                let f = self.feat_dim;
                let e = self.embed_dim;
                let w = &self.params[..e * 3 * f];
                let b = &self.params[e * 3 * f..e * 3 * f + e];
                let v = &self.params[e * 3 * f + e..];
                let mut scores = Vec::with_capacity(docs.len());
                let mut hidden = Vec::with_capacity(docs.len());
                for xd in docs {
                    let u = Self::joint_sparse_input(xq, xd, f);
                    let mut pre = vec![0.0; e];
                    for &(j, uj) in &u {
                        let j = j as usize;
                        for (i, p) in pre.iter_mut().enumerate() {
                            *p += w[i * 3 * f + j] * uj;
                        }
                    }
                    let h: Vec<f64> = pre
                        .into_iter()
                        .zip(b)
                        .map(|(p, bi)| (p + bi).tanh())
                        .collect();
                    scores.push(crate::features::dot(v, &h));
                    hidden.push(h);
                }
                if !scores.iter().all(|s| s.is_finite()) {
                    return Err(Error::NonFinite {
                        context: "joint network weights".into(),
                    });
                }
                Ok((
                    ChainActivations {
                        query_embed: None,
                        doc_embeds: Vec::new(),
                        joint_hidden: hidden,
                    },
                    scores,
                ))
            }
        }
    }

    /// Accumulate `sum_i coefs[i] * d score_i / d theta` into `grad`, using
    /// the activations from [`ScorerModel::score_candidates`].
    pub fn accumulate_chain_grads(
        &self,
        xq: &SparseVec,
        docs: &[&SparseVec],
        acts: &ChainActivations,
        coefs: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.params.len() || coefs.len() != docs.len() {
            return Err(Error::Invalid("chain gradient shape mismatch".into()));
        }
        let f = self.feat_dim;
        let e = self.embed_dim;
        match self.arch {
            Arch::DualTower | Arch::SharedTower => {
                let eq = acts.query_embed.as_ref().expect("activations match arch");
                let inv_t = 1.0 / self.temperature;
                let q_off = self.tower_offset(Side::Query);
                let d_off = self.tower_offset(Side::Doc);
                // Query tower: all candidates share xq, so their backward
                // terms collapse into one outer product.
                let mut mixed = vec![0.0; e];
                for (coef, ed) in coefs.iter().zip(&acts.doc_embeds) {
                    if *coef == 0.0 {
                        continue;
                    }
                    for (m, edi) in mixed.iter_mut().zip(ed) {
                        *m += coef * edi;
                    }
                }
                for i in 0..e {
                    let c = mixed[i] * (1.0 - eq[i] * eq[i]) * inv_t;
                    if c == 0.0 {
                        continue;
                    }
                    let row = &mut grad[q_off + i * f..q_off + (i + 1) * f];
                    for &(j, xj) in xq.entries() {
                        row[j as usize] += c * xj;
                    }
                }
                for ((coef, ed), xd) in coefs.iter().zip(&acts.doc_embeds).zip(docs) {
                    if *coef == 0.0 {
                        continue;
                    }
                    for i in 0..e {
                        let c = coef * eq[i] * (1.0 - ed[i] * ed[i]) * inv_t;
                        if c == 0.0 {
                            continue;
                        }
                        let row = &mut grad[d_off + i * f..d_off + (i + 1) * f];
                        for &(j, xj) in xd.entries() {
                            row[j as usize] += c * xj;
                        }
                    }
                }
            }
            Arch::Joint => {
                let v_off = e * 3 * f + e;
                for ((coef, h), xd) in coefs.iter().zip(&acts.joint_hidden).zip(docs) {
                    if *coef == 0.0 {
                        continue;
                    }
                    let u = Self::joint_sparse_input(xq, xd, f);
                    for i in 0..e {
                        let c = coef * self.params[v_off + i] * (1.0 - h[i] * h[i]);
                        let row = &mut grad[i * 3 * f..(i + 1) * 3 * f];
                        for &(j, uj) in &u {
                            row[j as usize] += c * uj;
                        }
                        grad[e * 3 * f + i] += c;
                        grad[v_off + i] += coef * h[i];
                    }
                }
            }
        }
        Ok(())
    }

    // -- checkpoint io ------------------------------------------------------

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(self.arch.code());
        out.extend_from_slice(&[0u8; 7]);
        out.extend_from_slice(&(self.feat_dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.embed_dim as u64).to_le_bytes());
        out.extend_from_slice(&self.temperature.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Invalid(format!("checkpoint: {msg}"));
        if bytes.len() < 48 {
            return Err(bad("truncated header"));
        }
        if &bytes[0..8] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let arch = Arch::from_code(bytes[8])?;
        let u64_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let feat_dim = u64_at(16) as usize;
        let embed_dim = u64_at(24) as usize;
        let temperature = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
        let count = u64_at(40) as usize;
        if bytes.len() != 48 + 8 * count {
            return Err(bad("parameter payload length mismatch"));
        }
        let params: Vec<f64> = (0..count)
            .map(|i| f64::from_le_bytes(bytes[48 + 8 * i..56 + 8 * i].try_into().unwrap()))
            .collect();
        let model = ScorerModel {
            arch,
            feat_dim,
            embed_dim,
            temperature,
            params,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_features(rng: &mut rand_chacha::ChaCha8Rng, f: usize) -> Vec<f64> {
        (0..f).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn zero_features_embed_to_zero() {
        let m = ScorerModel::init(Arch::DualTower, 8, 4, 1.0, 1);
        let e = m.embed_features(&vec![0.0; 8], Side::Query).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_tower_embeds_both_sides_identically() {
        let m = ScorerModel::init(Arch::SharedTower, 8, 4, 1.0, 2);
        let x = vec![0.3, -0.7, 1.0, 0.0, 0.5, 0.2, -0.1, 0.9];
        let eq = m.embed_features(&x, Side::Query).unwrap();
        let ed = m.embed_features(&x, Side::Doc).unwrap();
        assert_eq!(eq, ed);
    }

    #[test]
    fn dual_tower_with_distinct_weights_separates_sides() {
        // Untie the towers: splice the doc tower from a different draw.
        let mut m = ScorerModel::init(Arch::DualTower, 8, 4, 1.0, 3);
        let other = ScorerModel::init(Arch::SharedTower, 8, 4, 1.0, 99);
        m.params[4 * 8..].copy_from_slice(&other.params);
        let x = vec![0.3, -0.7, 1.0, 0.0, 0.5, 0.2, -0.1, 0.9];
        let eq = m.embed_features(&x, Side::Query).unwrap();
        let ed = m.embed_features(&x, Side::Doc).unwrap();
        assert_ne!(eq, ed);
    }

    #[test]
    fn dual_tower_initializes_tied() {
        let m = ScorerModel::init(Arch::DualTower, 8, 4, 1.0, 3);
        let ef = 4 * 8;
        assert_eq!(m.params[..ef], m.params[ef..]);
    }

    #[test]
    fn joint_arch_has_no_embedding() {
        let m = ScorerModel::init(Arch::Joint, 4, 3, 1.0, 4);
        assert!(matches!(
            m.embed_features(&vec![0.0; 4], Side::Query),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn near_unit_embeddings_score_one() {
        // Saturate the first hidden unit on the first feature: tanh of a
        // large pre-activation is 1 to machine precision.
        let f = 4;
        let e = 3;
        let mut m = ScorerModel::init(Arch::DualTower, f, e, 1.0, 5);
        m.params.iter_mut().for_each(|p| *p = 0.0);
        m.params[0] = 25.0; // W_q[0,0]
        m.params[e * f] = 25.0; // W_d[0,0]
        let x = vec![1.0, 0.0, 0.0, 0.0];
        let s = m.score_features(&x, &x).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn doubling_temperature_halves_dot_scores() {
        let m1 = ScorerModel::init(Arch::SharedTower, 8, 4, 1.0, 6);
        let m2 = ScorerModel {
            temperature: 2.0,
            ..m1.clone()
        };
        let mut rng = crate::seeding::rng_for(6, 0x40, 0);
        let xq = random_features(&mut rng, 8);
        let xd = random_features(&mut rng, 8);
        let s1 = m1.score_features(&xq, &xd).unwrap();
        let s2 = m2.score_features(&xq, &xd).unwrap();
        assert_eq!(s2, s1 / 2.0);
    }

    #[test]
    fn joint_with_zero_weights_scores_zero() {
        let mut m = ScorerModel::init(Arch::Joint, 4, 3, 1.0, 7);
        m.params.iter_mut().for_each(|p| *p = 0.0);
        let s = m
            .score_features(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0])
            .unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn shared_tower_is_a_tied_dual_tower() {
        let shared = ScorerModel::init(Arch::SharedTower, 8, 4, 1.0, 8);
        let mut tied_params = shared.params.clone();
        tied_params.extend_from_slice(&shared.params);
        let dual = ScorerModel {
            arch: Arch::DualTower,
            params: tied_params,
            ..shared.clone()
        };
        let mut rng = crate::seeding::rng_for(8, 0x41, 0);
        for _ in 0..20 {
            let xq = random_features(&mut rng, 8);
            let xd = random_features(&mut rng, 8);
            assert_eq!(
                shared.score_features(&xq, &xd).unwrap(),
                dual.score_features(&xq, &xd).unwrap()
            );
        }
    }

    #[test]
    fn scoring_is_deterministic() {
        let m = ScorerModel::init(Arch::Joint, 6, 4, 1.0, 9);
        let mut rng = crate::seeding::rng_for(9, 0x42, 0);
        let xq = random_features(&mut rng, 6);
        let xd = random_features(&mut rng, 6);
        let a = m.score_features(&xq, &xd).unwrap();
        let b = m.score_features(&xq, &xd).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn zero_features_zero_tower_gradient() {
        let m = ScorerModel::init(Arch::SharedTower, 6, 3, 1.0, 10);
        let g = m
            .score_with_grad_features(&vec![0.0; 6], &vec![0.0; 6])
            .unwrap();
        assert!(g.grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn temperature_scales_dot_gradients_inversely() {
        let m1 = ScorerModel::init(Arch::DualTower, 6, 3, 1.0, 11);
        let m2 = ScorerModel {
            temperature: 2.0,
            ..m1.clone()
        };
        let mut rng = crate::seeding::rng_for(11, 0x43, 0);
        let xq = random_features(&mut rng, 6);
        let xd = random_features(&mut rng, 6);
        let g1 = m1.score_with_grad_features(&xq, &xd).unwrap();
        let g2 = m2.score_with_grad_features(&xq, &xd).unwrap();
        for (a, b) in g1.grad.iter().zip(&g2.grad) {
            assert!((b - a / 2.0).abs() < 1e-15);
        }
    }

    /// Central finite differences across 100 random (theta, q, d) triples per
    /// arch, 20 coordinates each, step 1e-5, relative tolerance 1e-4.
    #[test]
    fn gradients_match_finite_differences_for_every_arch() {
        for arch in [Arch::DualTower, Arch::SharedTower, Arch::Joint] {
            let f = 6;
            let e = 3;
            let mut rng = crate::seeding::rng_for(42, 0x44, arch.code() as u64);
            for case in 0..100 {
                let model = ScorerModel::init(arch, f, e, 1.0, 1000 + case);
                let xq = random_features(&mut rng, f);
                let xd = random_features(&mut rng, f);
                let got = model.score_with_grad_features(&xq, &xd).unwrap();
                assert_eq!(got.value, model.score_features(&xq, &xd).unwrap());
                let n = model.params.len();
                for _ in 0..20 {
                    let coord = (rng.gen::<u64>() % n as u64) as usize;
                    let h = 1e-5;
                    let mut probe = model.clone();
                    probe.params[coord] += h;
                    let up = probe.score_features(&xq, &xd).unwrap();
                    probe.params[coord] -= 2.0 * h;
                    let down = probe.score_features(&xq, &xd).unwrap();
                    let fd = (up - down) / (2.0 * h);
                    let a = got.grad[coord];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
                    assert!(
                        rel < 1e-4 || (a - fd).abs() < 1e-9,
                        "{}: coord {coord}: {a} vs fd {fd}",
                        arch.name()
                    );
                }
            }
        }
    }

    #[test]
    fn sparse_scoring_matches_dense_bitwise() {
        for arch in [Arch::DualTower, Arch::SharedTower, Arch::Joint] {
            let f = 32;
            let model = ScorerModel::init(arch, f, 6, 0.7, 21);
            let fmap = crate::features::FeatureMap::hashed(f);
            let texts = ["red apple pie", "green tea", "apple tree orchard", ""];
            let xq = crate::features::hash_tokens("apple pie recipe", f);
            let xq_s = SparseVec::from_dense(&xq);
            let dense: Vec<Vec<f64>> = texts
                .iter()
                .map(|t| crate::features::hash_tokens(t, f))
                .collect();
            let sparse: Vec<SparseVec> = dense.iter().map(|d| SparseVec::from_dense(d)).collect();
            let refs: Vec<&SparseVec> = sparse.iter().collect();
            let (_, z) = model.score_candidates(&xq_s, &refs).unwrap();
            for (i, d) in dense.iter().enumerate() {
                let want = model.score_features(&xq, d).unwrap();
                assert_eq!(z[i].to_bits(), want.to_bits(), "{} doc {i}", arch.name());
            }
            if arch.has_embeddings() {
                let eq = model.embed_sparse(&xq_s, Side::Query).unwrap();
                let want = model.embed_features(&xq, Side::Query).unwrap();
                assert_eq!(eq, want);
            }
            let _ = fmap;
        }
    }

    #[test]
    fn chain_gradients_match_per_pair_gradients() {
        for arch in [Arch::DualTower, Arch::SharedTower, Arch::Joint] {
            let f = 24;
            let model = ScorerModel::init(arch, f, 5, 1.3, 33);
            let xq = crate::features::hash_tokens("alpha beta gamma", f);
            let dense: Vec<Vec<f64>> = ["alpha delta", "beta beta epsilon", "zeta"]
                .iter()
                .map(|t| crate::features::hash_tokens(t, f))
                .collect();
            let xq_s = SparseVec::from_dense(&xq);
            let sparse: Vec<SparseVec> = dense.iter().map(|d| SparseVec::from_dense(d)).collect();
            let refs: Vec<&SparseVec> = sparse.iter().collect();
            let coefs = [0.5, -1.25, 2.0];
            let (acts, _) = model.score_candidates(&xq_s, &refs).unwrap();
            let mut fast = vec![0.0; model.params.len()];
            model
                .accumulate_chain_grads(&xq_s, &refs, &acts, &coefs, &mut fast)
                .unwrap();
            let mut slow = vec![0.0; model.params.len()];
            for (coef, d) in coefs.iter().zip(&dense) {
                let sg = model.score_with_grad_features(&xq, d).unwrap();
                for (s, g) in slow.iter_mut().zip(&sg.grad) {
                    *s += coef * g;
                }
            }
            for (a, b) in fast.iter().zip(&slow) {
                assert!(
                    (a - b).abs() < 1e-12,
                    "{}: fast {a} vs slow {b}",
                    arch.name()
                );
            }
        }
    }

    #[test]
    fn checkpoint_round_trips() {
        for arch in [Arch::DualTower, Arch::SharedTower, Arch::Joint] {
            let m = ScorerModel::init(arch, 5, 3, 1.5, 77);
            let back = ScorerModel::from_bytes(&m.to_bytes()).unwrap();
            assert_eq!(m, back);
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(ScorerModel::from_bytes(b"short").is_err());
        let m = ScorerModel::init(Arch::SharedTower, 4, 2, 1.0, 1);
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        assert!(ScorerModel::from_bytes(&bytes).is_err());
        let mut truncated = m.to_bytes();
        truncated.pop();
        assert!(ScorerModel::from_bytes(&truncated).is_err());
    }
}

//! weakrank: a desk-scale laboratory for training first-stage retrieval and
//! re-ranking scorers under injected label noise.
//!
//! The library covers the full experimental loop:
//!
//! - [`dataset`]: corpora, queries, binary judgments; file loaders and a
//!   seeded synthetic generator with cluster structure.
//! - [`noise`]: semantic-aware label corruption — a controlled fraction of
//!   training positives is swapped for its most similar non-relevant
//!   document, with an audit trail.
//! - [`scorer`]: three trainable architectures (dual tower, shared tower,
//!   joint pair scorer) with analytic gradients.
//! - [`losses`]: the listwise robust-loss zoo (CE, NCE, GCE, AGCE, AUL, LS,
//!   ELS, NAGCE, NAUL, LR) over a candidate softmax.
//! - [`weakening`]: ambiguated target sets driven by a possibility
//!   distribution, the optimistic superset loss, and epoch-boundary
//!   confidence snapshots.
//! - [`index`]: exact top-K retrieval, hard-negative mining, and
//!   reciprocal-nearest-neighbor Jaccard similarity.
//! - [`trainer`]: epoch training with in-batch negatives, per-loss dispatch,
//!   and grid search.
//! - [`eval`]: recall@K and MRR against clean judgments, aggregated over
//!   repeated runs.
//! - [`oracles`]: naive reference implementations used only by tests.
//!
//! The `weakrank` binary exposes the same machinery as subcommands
//! (`generate`, `corrupt`, `train`, `evaluate`, `sweep`, `report`); the
//! `examples/` directory has one runnable walkthrough per capability.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod index;
pub mod losses;
pub mod noise;
pub mod oracles;
pub mod report;
pub mod scorer;
pub mod seeding;
pub mod sweep;
pub mod trainer;
pub mod weakening;

pub use error::{Error, Result};

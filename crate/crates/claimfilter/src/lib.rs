//! Deterministic conformal filtering for claim-scored documents.
//!
//! A document is a prompt-level unit holding an ordered list of claims, each
//! carrying one factuality score per base scorer (and, during calibration, a
//! binary truth label). This crate calibrates a threshold on held-out labeled
//! documents so that the filtered claim set of a fresh document contains only
//! true claims with probability at least `1 - alpha`, either marginally or
//! conditionally on a caller-supplied group label (Mondrian calibration).
//!
//! The filtering rule orders claims by decreasing combined score and retains
//! the longest prefix whose aggregate (cumulative product by default) stays
//! above the calibrated threshold, randomizing membership of the boundary
//! claim so that coverage is exact rather than conservative.
//!
//! Modules:
//!
//! - [`types`]: domain types, score conventions, corpus validation.
//! - [`filter`]: the prefix-aggregate filtering operator and the claim-wise
//!   threshold filter.
//! - [`calibration`]: conformity scores, conformal quantiles, marginal and
//!   group-conditional calibration, model-driven filtering.
//! - [`ensemble`]: weighted multi-scorer aggregation and constrained weight
//!   optimization (minimize FPR subject to a TPR floor).
//! - [`shift`]: density-ratio estimation and importance resampling of the
//!   calibration corpus under covariate shift.
//! - [`metrics`]: coverage, retention, TPR/FPR, MSE and Jaccard diagnostics.
//! - [`synth`]: synthetic oracle corpus generator and Monte-Carlo experiment
//!   harness.
//! - [`cli`]: batch front-end (corpus ingestion, command dispatch, artifact
//!   persistence).

pub mod calibration;
pub mod cli;
pub mod ensemble;
pub mod filter;
pub mod metrics;
pub mod rng;
pub mod shift;
pub mod synth;
pub mod types;

pub use types::{
    Aggregation, CalibrationMode, CalibrationModel, Claim, ConformityConvention, CorpusStats,
    Document, Error, Result,
};

//! Domain types, score conventions, and corpus validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared by all modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("document '{doc_id}' has no claims")]
    EmptyClaims { doc_id: String },

    #[error("document '{doc_id}' claim {claim}: empty score vector")]
    NoScores { doc_id: String, claim: usize },

    #[error("document '{doc_id}' claim {claim}: score {value} out of range [0, 1]")]
    ScoreOutOfRange {
        doc_id: String,
        claim: usize,
        value: f64,
    },

    #[error("document '{doc_id}' claim {claim}: oracle score {value} out of range [0, 1]")]
    OracleOutOfRange {
        doc_id: String,
        claim: usize,
        value: f64,
    },

    #[error("document '{doc_id}' claim {claim}: expected {expected} scores, found {actual}")]
    InconsistentScorers {
        doc_id: String,
        claim: usize,
        expected: usize,
        actual: usize,
    },

    #[error("document '{doc_id}' claim {claim}: missing label")]
    MissingLabel { doc_id: String, claim: usize },

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),

    #[error("randomization draw must lie in [0, 1), got {0}")]
    InvalidDraw(f64),

    #[error("epsilon must lie in (0, 1e-3], got {0}")]
    InvalidEpsilon(f64),

    #[error("power-mean exponent must be positive, got {0}")]
    InvalidLambda(f64),

    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),

    #[error("invalid simplex weights: {0}")]
    InvalidSimplex(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("model expects M={expected} scores per claim, corpus has M={actual}")]
    ScorerCountMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("all resampling weights are zero")]
    AllZeroWeights,

    #[error("no true claims available")]
    NoTrueClaims,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("oracle scores missing")]
    OracleMissing,
}

/// One atomic claim: its ordinal within the document, an optional truth
/// label, one factuality score per base scorer, and (on synthetic corpora)
/// the oracle score it was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub index: usize,
    /// `Some(true)` = true-claim, `Some(false)` = false-claim, `None` =
    /// unlabeled (allowed only at filter time).
    pub label: Option<bool>,
    /// One score per scorer, each in `[0, 1]`.
    pub scores: Vec<f64>,
    pub oracle_score: Option<f64>,
}

impl Claim {
    pub fn new(index: usize, label: Option<bool>, scores: Vec<f64>) -> Self {
        Self {
            index,
            label,
            scores,
            oracle_score: None,
        }
    }
}

/// A prompt-level unit: group label, optional prompt/response lengths used
/// as deployment-time features, and the ordered claim list.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub group: String,
    pub prompt_len: Option<u64>,
    pub response_len: Option<u64>,
    pub claims: Vec<Claim>,
}

impl Document {
    pub fn n_claims(&self) -> usize {
        self.claims.len()
    }

    /// Number of scores per claim, from the first claim.
    pub fn n_scorers(&self) -> usize {
        self.claims.first().map_or(0, |c| c.scores.len())
    }

    pub fn fully_labeled(&self) -> bool {
        self.claims.iter().all(|c| c.label.is_some())
    }

    /// The true-claim index set A. `None` unless every claim is labeled.
    pub fn true_claim_set(&self) -> Option<BTreeSet<usize>> {
        if !self.fully_labeled() {
            return None;
        }
        Some(
            self.claims
                .iter()
                .filter(|c| c.label == Some(true))
                .map(|c| c.index)
                .collect(),
        )
    }

    /// Claim scores as an N x M row-major matrix.
    pub fn score_matrix(&self) -> Vec<Vec<f64>> {
        self.claims.iter().map(|c| c.scores.clone()).collect()
    }
}

/// Which prefix-aggregation rule maps combined claim scores to the document
/// aggregate that the threshold is compared against.
///
/// All variants produce weakly decreasing prefix values in `[0, 1]`, so they
/// share identical cutoff/randomization machinery. `WorstCase` reproduces
/// the claim-wise baseline: the aggregate at rank k is the k-th largest
/// score and filtering degenerates to `score >= tau` without randomization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum Aggregation {
    /// Cumulative product of scores, computed in log space.
    Product,
    /// Prefix arithmetic mean (log of the mean is a monotone relabeling, so
    /// thresholds stay in score space).
    LogSum,
    /// Prefix power mean `((1/k) sum p^lambda)^(1/lambda)`.
    PowerMean { lambda: f64 },
    /// k-th largest score; the claim-wise threshold baseline.
    WorstCase,
}

/// Aggregation variant plus the log-domain guard epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformityConvention {
    #[serde(flatten)]
    pub variant: Aggregation,
    pub epsilon: f64,
}

pub const DEFAULT_EPSILON: f64 = 1e-12;

impl ConformityConvention {
    pub fn new(variant: Aggregation, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1e-3) {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        if let Aggregation::PowerMean { lambda } = variant {
            if !lambda.is_finite() || lambda <= 0.0 {
                return Err(Error::InvalidLambda(lambda));
            }
        }
        Ok(Self { variant, epsilon })
    }

    pub fn product() -> Self {
        Self {
            variant: Aggregation::Product,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn log_sum() -> Self {
        Self {
            variant: Aggregation::LogSum,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn power_mean(lambda: f64) -> Result<Self> {
        Self::new(Aggregation::PowerMean { lambda }, DEFAULT_EPSILON)
    }

    pub fn worst_case() -> Self {
        Self {
            variant: Aggregation::WorstCase,
            epsilon: DEFAULT_EPSILON,
        }
    }

    /// Short tag used in reports and on the command line:
    /// `product`, `log-sum`, `power-mean:<lambda>`, `worst-case`.
    pub fn tag(&self) -> String {
        match &self.variant {
            Aggregation::Product => "product".to_string(),
            Aggregation::LogSum => "log-sum".to_string(),
            Aggregation::PowerMean { lambda } => format!("power-mean:{lambda}"),
            Aggregation::WorstCase => "worst-case".to_string(),
        }
    }

    /// Parse a tag produced by [`ConformityConvention::tag`].
    pub fn parse(tag: &str) -> Result<Self> {
        if let Some(rest) = tag.strip_prefix("power-mean:") {
            let lambda: f64 = rest
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad power-mean exponent '{rest}'")))?;
            return Self::power_mean(lambda);
        }
        match tag {
            "product" => Ok(Self::product()),
            "log-sum" => Ok(Self::log_sum()),
            "worst-case" => Ok(Self::worst_case()),
            other => Err(Error::InvalidConfig(format!(
                "unknown convention '{other}' (expected product, log-sum, power-mean:<lambda>, worst-case)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.variant.clone(), self.epsilon).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    Marginal,
    Group,
}

impl CalibrationMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "marginal" => Ok(Self::Marginal),
            "group" => Ok(Self::Group),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode '{other}' (expected marginal or group)"
            ))),
        }
    }
}

/// Frozen output of calibration: the target miscoverage level, the score
/// convention, per-group ensemble weights and thresholds, and the marginal
/// fallback used for groups unseen at calibration time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub alpha: f64,
    pub convention: ConformityConvention,
    pub mode: CalibrationMode,
    /// Scores per claim the model was calibrated for.
    pub n_scorers: usize,
    /// Per-group simplex weight vectors (group mode). Groups present in the
    /// calibration data always have an entry, uniform when the ensemble was
    /// disabled.
    pub weights: BTreeMap<String, Vec<f64>>,
    /// Weights applied in marginal mode and to documents from unseen groups.
    pub fallback_weights: Vec<f64>,
    /// Per-group conformal thresholds (group mode).
    pub thresholds: BTreeMap<String, f64>,
    /// Threshold computed over all calibration documents pooled.
    pub marginal_threshold: f64,
    pub calibration_counts: BTreeMap<String, usize>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta: Option<f64>,
    /// Groups whose quantile rank exceeded the group size, forcing the
    /// maximally conservative threshold 1.0.
    #[serde(default)]
    pub degenerate_groups: Vec<String>,
}

const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Check that `w` is a probability vector: nonnegative, sums to 1 within 1e-9.
pub fn validate_simplex(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidSimplex("empty weight vector".to_string()));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidSimplex(format!(
            "negative or non-finite entry in {w:?}"
        )));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::InvalidSimplex(format!("weights sum to {sum}")));
    }
    Ok(())
}

pub fn uniform_weights(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

impl CalibrationModel {
    /// Structural invariants; run after deserializing a model file.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        self.convention.validate()?;
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::InvalidDelta(d));
            }
        }
        validate_simplex(&self.fallback_weights)?;
        if self.fallback_weights.len() != self.n_scorers {
            return Err(Error::DimensionMismatch {
                expected: self.n_scorers,
                actual: self.fallback_weights.len(),
            });
        }
        for (group, w) in &self.weights {
            validate_simplex(w)?;
            if w.len() != self.n_scorers {
                return Err(Error::InvalidSimplex(format!(
                    "group '{group}' has {} weights, expected {}",
                    w.len(),
                    self.n_scorers
                )));
            }
        }
        for (group, t) in self
            .thresholds
            .iter()
            .chain(std::iter::once((&"marginal".to_string(), &self.marginal_threshold)))
        {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::InvalidConfig(format!(
                    "threshold for '{group}' out of range: {t}"
                )));
            }
        }
        for (group, n) in &self.calibration_counts {
            if *n == 0 {
                return Err(Error::InvalidConfig(format!(
                    "stored group '{group}' has zero calibration documents"
                )));
            }
        }
        Ok(())
    }

    /// True when every threshold, including the marginal fallback, is the
    /// degenerate 1.0 (the filter retains nothing anywhere).
    pub fn is_fully_degenerate(&self) -> bool {
        self.marginal_threshold >= 1.0 && self.thresholds.values().all(|t| *t >= 1.0)
    }
}

/// Validated corpus statistics returned by [`validate_corpus`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub n_claims: usize,
    pub n_scorers: usize,
    pub group_counts: BTreeMap<String, usize>,
    pub labeled_claims: usize,
    pub true_claims: usize,
    /// Label prevalence: true claims / labeled claims, when any are labeled.
    pub rho: Option<f64>,
}

/// Walk the corpus once, enforcing every claim-level invariant: nonempty
/// claim lists, nonempty score vectors, scores in [0, 1], a single M across
/// all claims, and (when `require_labels`) a label on every claim.
pub fn validate_corpus(docs: &[Document], require_labels: bool) -> Result<CorpusStats> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut n_scorers: Option<usize> = None;
    let mut n_claims = 0usize;
    let mut labeled = 0usize;
    let mut true_claims = 0usize;
    let mut group_counts: BTreeMap<String, usize> = BTreeMap::new();

    for doc in docs {
        if doc.claims.is_empty() {
            return Err(Error::EmptyClaims {
                doc_id: doc.id.clone(),
            });
        }
        *group_counts.entry(doc.group.clone()).or_insert(0) += 1;
        for claim in &doc.claims {
            if claim.scores.is_empty() {
                return Err(Error::NoScores {
                    doc_id: doc.id.clone(),
                    claim: claim.index,
                });
            }
            let m = *n_scorers.get_or_insert(claim.scores.len());
            if claim.scores.len() != m {
                return Err(Error::InconsistentScorers {
                    doc_id: doc.id.clone(),
                    claim: claim.index,
                    expected: m,
                    actual: claim.scores.len(),
                });
            }
            for &s in &claim.scores {
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::ScoreOutOfRange {
                        doc_id: doc.id.clone(),
                        claim: claim.index,
                        value: s,
                    });
                }
            }
            if let Some(o) = claim.oracle_score {
                if !(0.0..=1.0).contains(&o) {
                    return Err(Error::OracleOutOfRange {
                        doc_id: doc.id.clone(),
                        claim: claim.index,
                        value: o,
                    });
                }
            }
            match claim.label {
                Some(l) => {
                    labeled += 1;
                    if l {
                        true_claims += 1;
                    }
                }
                None if require_labels => {
                    return Err(Error::MissingLabel {
                        doc_id: doc.id.clone(),
                        claim: claim.index,
                    });
                }
                None => {}
            }
            n_claims += 1;
        }
    }

    Ok(CorpusStats {
        n_docs: docs.len(),
        n_claims,
        n_scorers: n_scorers.unwrap_or(0),
        group_counts,
        labeled_claims: labeled,
        true_claims,
        rho: (labeled > 0).then(|| true_claims as f64 / labeled as f64),
    })
}

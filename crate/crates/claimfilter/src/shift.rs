//! Covariate-shift correction: density-ratio estimation from
//! deployment-time features and importance resampling of the calibration
//! corpus.
//!
//! Features require no labels: per-document mean and standard deviation of
//! the claim scores (each claim contributing the mean of its M scorer
//! scores) plus prompt/response lengths and a bias term. A logistic
//! classifier trained to distinguish calibration (label 0) from test
//! (label 1) documents yields the density ratio as the odds
//! `p / (1 - p)`, clipped to keep any single document's resampling mass
//! bounded. Resampling then draws n calibration indices from
//! `Multinomial(n; pi)` with `pi_i` proportional to the ratios, and the
//! unchanged calibration pipeline runs on the resampled corpus.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::types::{Document, Error, Result};

/// Deployment-time document features, in a fixed order with a trailing
/// bias constant 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean_score: f64,
    pub std_score: f64,
    pub prompt_len: f64,
    pub response_len: f64,
}

pub const N_FEATURES: usize = 5;

impl FeatureVector {
    pub fn as_array(&self) -> [f64; N_FEATURES] {
        [
            self.mean_score,
            self.std_score,
            self.prompt_len,
            self.response_len,
            1.0,
        ]
    }
}

/// Per-claim feature score: mean over the M scorer scores. Document
/// features are the population mean/std over claims; absent lengths
/// default to 0.
pub fn extract_features(doc: &Document) -> FeatureVector {
    let n = doc.claims.len();
    if n == 0 {
        return FeatureVector {
            mean_score: 0.0,
            std_score: 0.0,
            prompt_len: doc.prompt_len.unwrap_or(0) as f64,
            response_len: doc.response_len.unwrap_or(0) as f64,
        };
    }
    let claim_scores: Vec<f64> = doc
        .claims
        .iter()
        .map(|c| c.scores.iter().sum::<f64>() / c.scores.len() as f64)
        .collect();
    let mean = claim_scores.iter().sum::<f64>() / n as f64;
    let var = claim_scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
    FeatureVector {
        mean_score: mean,
        std_score: var.sqrt(),
        prompt_len: doc.prompt_len.unwrap_or(0) as f64,
        response_len: doc.response_len.unwrap_or(0) as f64,
    }
}

/// Fitted logistic density-ratio model with the feature standardization it
/// was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioModel {
    pub coefficients: [f64; N_FEATURES],
    pub feature_means: [f64; N_FEATURES],
    pub feature_scales: [f64; N_FEATURES],
    pub clip_bounds: (f64, f64),
}

pub const DEFAULT_CLIP_BOUNDS: (f64, f64) = (0.01, 100.0);

/// Training hyperparameters for [`fit_density_ratio`].
#[derive(Debug, Clone)]
pub struct RatioFitConfig {
    pub iters: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for RatioFitConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            step: 0.1,
            seed: 0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl RatioModel {
    fn standardized(&self, f: &FeatureVector) -> [f64; N_FEATURES] {
        let raw = f.as_array();
        let mut out = [0.0; N_FEATURES];
        for i in 0..N_FEATURES {
            out[i] = (raw[i] - self.feature_means[i]) / self.feature_scales[i];
        }
        out
    }

    /// Classifier probability that the document comes from the target side.
    pub fn probability(&self, f: &FeatureVector) -> f64 {
        let x = self.standardized(f);
        let z: f64 = x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum();
        sigmoid(z)
    }

    /// Estimated density ratio `p / (1 - p)`, clipped.
    pub fn ratio(&self, f: &FeatureVector) -> f64 {
        let p = self.probability(f).clamp(1e-12, 1.0 - 1e-12);
        (p / (1.0 - p)).clamp(self.clip_bounds.0, self.clip_bounds.1)
    }

    pub fn ratios_for(&self, docs: &[Document]) -> Vec<f64> {
        docs.iter().map(|d| self.ratio(&extract_features(d))).collect()
    }
}

/// Fit a logistic source-vs-target classifier by full-batch gradient
/// descent on class-balanced log-loss (label 0 = source, 1 = target).
///
/// Features other than the bias are standardized to zero mean and unit
/// scale over the pooled training set; near-constant features keep scale 1.
/// Coefficients start at zero, so `iters = 0` leaves every ratio at 1.
pub fn fit_density_ratio(
    source_docs: &[Document],
    target_docs: &[Document],
    config: &RatioFitConfig,
) -> Result<RatioModel> {
    if source_docs.is_empty() {
        return Err(Error::EmptyInput("source documents"));
    }
    if target_docs.is_empty() {
        return Err(Error::EmptyInput("target documents"));
    }
    let _ = config.seed; // init is deterministic at zero; kept for API stability

    let features: Vec<[f64; N_FEATURES]> = source_docs
        .iter()
        .chain(target_docs)
        .map(|d| extract_features(d).as_array())
        .collect();
    let n = features.len();
    let n_src = source_docs.len();

    let mut means = [0.0; N_FEATURES];
    let mut scales = [1.0; N_FEATURES];
    for i in 0..N_FEATURES - 1 {
        let m: f64 = features.iter().map(|f| f[i]).sum::<f64>() / n as f64;
        let v: f64 = features.iter().map(|f| (f[i] - m) * (f[i] - m)).sum::<f64>() / n as f64;
        means[i] = m;
        scales[i] = if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 };
    }

    let standardized: Vec<[f64; N_FEATURES]> = features
        .iter()
        .map(|f| {
            let mut x = [0.0; N_FEATURES];
            for i in 0..N_FEATURES {
                x[i] = (f[i] - means[i]) / scales[i];
            }
            x
        })
        .collect();

    // class-balancing weights: each class carries total mass 1/2
    let w_src = 0.5 / n_src as f64;
    let w_tgt = 0.5 / (n - n_src) as f64;

    let mut coef = [0.0; N_FEATURES];
    for _ in 0..config.iters {
        let mut grad = [0.0; N_FEATURES];
        for (idx, x) in standardized.iter().enumerate() {
            let y = if idx < n_src { 0.0 } else { 1.0 };
            let w = if idx < n_src { w_src } else { w_tgt };
            let z: f64 = x.iter().zip(&coef).map(|(a, b)| a * b).sum();
            let err = sigmoid(z) - y;
            for i in 0..N_FEATURES {
                grad[i] += w * err * x[i];
            }
        }
        for i in 0..N_FEATURES {
            coef[i] -= config.step * grad[i];
        }
    }

    Ok(RatioModel {
        coefficients: coef,
        feature_means: means,
        feature_scales: scales,
        clip_bounds: DEFAULT_CLIP_BOUNDS,
    })
}

/// Draw `docs.len()` indices with replacement, proportional to the ratios,
/// and return the corresponding document copies. Deterministic given seed.
pub fn resample_calibration(docs: &[Document], ratios: &[f64], seed: u64) -> Result<Vec<Document>> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("calibration documents"));
    }
    if docs.len() != ratios.len() {
        return Err(Error::DimensionMismatch {
            expected: docs.len(),
            actual: ratios.len(),
        });
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::InvalidConfig(
            "resampling ratios must be nonnegative and finite".to_string(),
        ));
    }
    let total: f64 = ratios.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let mut cumulative = Vec::with_capacity(ratios.len());
    let mut acc = 0.0;
    for r in ratios {
        acc += r;
        cumulative.push(acc);
    }
    let mut gen = rng::rng_from(rng::derive_seed(seed, 0x5e5a));
    let mut out = Vec::with_capacity(docs.len());
    for _ in 0..docs.len() {
        let x: f64 = gen.gen::<f64>() * total;
        let idx = cumulative.partition_point(|c| *c <= x).min(docs.len() - 1);
        out.push(docs[idx].clone());
    }
    Ok(out)
}

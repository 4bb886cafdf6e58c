//! Synthetic oracle corpus generator and Monte-Carlo experiment harness.
//!
//! The generator follows the idealized benchmark regime: each claim draws an
//! oracle score `p*` from its group's Beta law, a label from
//! `Bernoulli(p*)`, and per-scorer estimates `clamp(p* + N(0, sigma_m^2))`.
//! Under zero scorer noise the filter sees the oracle scores themselves,
//! which is what makes the coverage and uniformity guarantees empirically
//! checkable at desk scale.
//!
//! Experiments split each trial's corpus 40/40/20 into optimization /
//! calibration / test partitions (weight search needs data disjoint from
//! calibration), run the full pipeline, and aggregate per-group coverage
//! and retention with Monte-Carlo standard errors. Trial seeds derive from
//! `hash(master_seed, trial_index)`, so results are order-independent.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, filter_with_model, WeightPlan};
use crate::ensemble::{optimize_weights, WeightSearchConfig};
use crate::metrics::{self, DocEval};
use crate::rng::{derive_seed, doc_draw, rng_from};
use crate::shift::{extract_features, fit_density_ratio, resample_calibration, RatioFitConfig};
use crate::types::{
    CalibrationMode, Claim, ConformityConvention, Document, Error, Result, DEFAULT_EPSILON,
};

/// One synthetic group: sampling proportion and the Beta law of its oracle
/// scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub proportion: f64,
    pub beta_a: f64,
    pub beta_b: f64,
}

/// Generator parameters for a synthetic corpus and its experiment protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_docs: usize,
    /// Inclusive [min, max] claims per document.
    pub claims_per_doc: (usize, usize),
    pub groups: Vec<GroupSpec>,
    /// One noise standard deviation per scorer.
    pub scorer_noise: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_alphas() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

fn default_trials() -> usize {
    30
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_docs == 0 {
            return Err(Error::InvalidConfig("n_docs must be >= 1".to_string()));
        }
        let (lo, hi) = self.claims_per_doc;
        if lo < 1 || hi < lo {
            return Err(Error::InvalidConfig(format!(
                "claims_per_doc range [{lo}, {hi}] invalid"
            )));
        }
        if self.groups.is_empty() {
            return Err(Error::InvalidConfig("at least one group required".to_string()));
        }
        let total: f64 = self.groups.iter().map(|g| g.proportion).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "group proportions sum to {total}, expected 1"
            )));
        }
        for g in &self.groups {
            if g.proportion < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "group '{}' has negative proportion",
                    g.name
                )));
            }
            if !(g.beta_a > 0.0 && g.beta_b > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "group '{}' Beta parameters must be positive",
                    g.name
                )));
            }
        }
        if self.scorer_noise.is_empty() {
            return Err(Error::InvalidConfig("at least one scorer required".to_string()));
        }
        if self.scorer_noise.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(Error::InvalidConfig("scorer noise must be >= 0".to_string()));
        }
        for a in &self.alphas {
            if !(*a > 0.0 && *a < 1.0) {
                return Err(Error::InvalidAlpha(*a));
            }
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SimConfig =
            toml::from_str(s).map_err(|e| Error::InvalidConfig(format!("sim config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Generate a labeled corpus with oracle scores under the config's own seed.
pub fn generate_corpus(config: &SimConfig) -> Result<Vec<Document>> {
    generate_corpus_seeded(config, config.seed)
}

/// Generate with an explicit seed (trial harnesses derive one per trial).
pub fn generate_corpus_seeded(config: &SimConfig, seed: u64) -> Result<Vec<Document>> {
    config.validate()?;
    let mut gen = rng_from(derive_seed(seed, 0xC0));
    let betas: Vec<Beta<f64>> = config
        .groups
        .iter()
        .map(|g| Beta::new(g.beta_a, g.beta_b).expect("parameters validated"))
        .collect();
    let noises: Vec<Option<Normal<f64>>> = config
        .scorer_noise
        .iter()
        .map(|s| {
            if *s > 0.0 {
                Some(Normal::new(0.0, *s).expect("sigma validated"))
            } else {
                None
            }
        })
        .collect();

    let mut docs = Vec::with_capacity(config.n_docs);
    for i in 0..config.n_docs {
        let draw: f64 = gen.gen();
        let mut acc = 0.0;
        let mut g_idx = config.groups.len() - 1;
        for (gi, g) in config.groups.iter().enumerate() {
            acc += g.proportion;
            if draw < acc {
                g_idx = gi;
                break;
            }
        }
        let n_claims = gen.gen_range(config.claims_per_doc.0..=config.claims_per_doc.1);
        let claims = (0..n_claims)
            .map(|j| {
                let p_star: f64 = betas[g_idx].sample(&mut gen);
                let label = gen.gen::<f64>() < p_star;
                let scores: Vec<f64> = noises
                    .iter()
                    .map(|noise| match noise {
                        None => p_star,
                        Some(n) => (p_star + n.sample(&mut gen))
                            .clamp(DEFAULT_EPSILON, 1.0 - DEFAULT_EPSILON),
                    })
                    .collect();
                Claim {
                    index: j,
                    label: Some(label),
                    scores,
                    oracle_score: Some(p_star),
                }
            })
            .collect();
        docs.push(Document {
            id: format!("d{i:06}"),
            group: config.groups[g_idx].name.clone(),
            prompt_len: Some(gen.gen_range(5..120)),
            response_len: Some(gen.gen_range(30..400)),
            claims,
        });
    }
    Ok(docs)
}

const OPT_FRACTION: f64 = 0.4;
const CAL_FRACTION: f64 = 0.4;

/// Stratified 40/40/20 split into optimization / calibration / test,
/// shuffled within each group so per-group exchangeability is preserved.
pub fn partition_three(
    docs: &[Document],
    seed: u64,
) -> (Vec<Document>, Vec<Document>, Vec<Document>) {
    let mut by_group: BTreeMap<&str, Vec<&Document>> = BTreeMap::new();
    for d in docs {
        by_group.entry(d.group.as_str()).or_default().push(d);
    }
    let mut opt = Vec::new();
    let mut cal = Vec::new();
    let mut test = Vec::new();
    for (gi, (_, mut members)) in by_group.into_iter().enumerate() {
        let mut gen = rng_from(derive_seed(seed, 0xA11 + gi as u64));
        members.shuffle(&mut gen);
        let n = members.len();
        let n_opt = (n as f64 * OPT_FRACTION).floor() as usize;
        let n_cal = (n as f64 * CAL_FRACTION).floor() as usize;
        for (i, d) in members.into_iter().enumerate() {
            if i < n_opt {
                opt.push(d.clone());
            } else if i < n_opt + n_cal {
                cal.push(d.clone());
            } else {
                test.push(d.clone());
            }
        }
    }
    (opt, cal, test)
}

/// Mean / sample standard deviation / Monte-Carlo standard error of a set
/// of per-trial values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    pub mean: f64,
    pub std: f64,
    pub se: f64,
    pub trials: usize,
}

impl RateSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std = var.sqrt();
        RateSummary {
            mean,
            std,
            se: std / (n.max(1) as f64).sqrt(),
            trials: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub coverage: RateSummary,
    pub retention: RateSummary,
}

/// Aggregated output of [`coverage_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub alpha: f64,
    pub mode: CalibrationMode,
    pub convention: String,
    pub use_ensemble: bool,
    pub trials: usize,
    pub mean_calibration_size: f64,
    pub overall: GroupSummary,
    pub groups: BTreeMap<String, GroupSummary>,
    /// Trials in which at least one group hit the conservative-degenerate
    /// threshold 1.0.
    pub degenerate_trials: usize,
}

fn doc_evals_for(
    model: &crate::types::CalibrationModel,
    docs: &[Document],
    seed: u64,
) -> Result<Vec<DocEval>> {
    docs.iter()
        .map(|doc| {
            let u = doc_draw(seed, &doc.id);
            let outcome = filter_with_model(model, doc, u)?;
            Ok(DocEval {
                group: doc.group.clone(),
                retained: outcome.retained.into_iter().collect(),
                true_set: doc.true_claim_set().ok_or(Error::MissingLabel {
                    doc_id: doc.id.clone(),
                    claim: 0,
                })?,
                n_claims: doc.n_claims(),
            })
        })
        .collect()
}

fn per_group_rates(evals: &[DocEval]) -> BTreeMap<String, (f64, f64)> {
    let mut by_group: BTreeMap<&str, Vec<DocEval>> = BTreeMap::new();
    for e in evals {
        by_group.entry(e.group.as_str()).or_default().push(e.clone());
    }
    by_group
        .into_iter()
        .map(|(g, es)| {
            let cov = metrics::coverage(&es).expect("nonempty group");
            let ret = metrics::retention(&es).expect("nonempty group");
            (g.to_string(), (cov, ret))
        })
        .collect()
}

/// Run `config.trials` independent end-to-end trials (fresh corpus,
/// 40/40/20 partition, optional per-group weight optimization, calibrate,
/// filter, evaluate) and aggregate coverage/retention per group.
///
/// When the ensemble is enabled the harness uses a reduced search budget
/// (128 candidates, 2 polish rounds) per group per trial.
pub fn coverage_experiment(
    config: &SimConfig,
    alpha: f64,
    mode: CalibrationMode,
    convention: &ConformityConvention,
    use_ensemble: bool,
) -> Result<ExperimentReport> {
    config.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let m = config.scorer_noise.len();

    let mut overall_cov = Vec::with_capacity(config.trials);
    let mut overall_ret = Vec::with_capacity(config.trials);
    let mut group_cov: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut group_ret: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut degenerate_trials = 0usize;
    let mut cal_sizes = 0usize;

    for trial in 0..config.trials {
        let trial_seed = derive_seed(config.seed, trial as u64);
        let corpus = generate_corpus_seeded(config, trial_seed)?;
        let (opt, cal, test) = partition_three(&corpus, trial_seed);
        if cal.is_empty() || test.is_empty() {
            return Err(Error::InvalidConfig(
                "partition produced an empty calibration or test set".to_string(),
            ));
        }
        cal_sizes += cal.len();

        let plan = if use_ensemble {
            let mut per_group = BTreeMap::new();
            let mut by_group: BTreeMap<&str, Vec<Document>> = BTreeMap::new();
            for d in &opt {
                by_group.entry(d.group.as_str()).or_default().push(d.clone());
            }
            for (g, docs) in by_group {
                let cfg = WeightSearchConfig {
                    delta: 0.1,
                    budget: 128,
                    polish_steps: 2,
                    seed: derive_seed(trial_seed, 0xE5),
                };
                let outcome = optimize_weights(&docs, &cfg)?;
                per_group.insert(g.to_string(), outcome.weights);
            }
            WeightPlan {
                per_group,
                fallback: crate::types::uniform_weights(m),
            }
        } else {
            WeightPlan::uniform(m)
        };

        let model = calibrate(&cal, alpha, convention, mode, &plan, trial_seed)?;
        if !model.degenerate_groups.is_empty() {
            degenerate_trials += 1;
        }
        let evals = doc_evals_for(&model, &test, trial_seed)?;
        overall_cov.push(metrics::coverage(&evals)?);
        overall_ret.push(metrics::retention(&evals)?);
        for (g, (cov, ret)) in per_group_rates(&evals) {
            group_cov.entry(g.clone()).or_default().push(cov);
            group_ret.entry(g).or_default().push(ret);
        }
    }

    let groups = group_cov
        .iter()
        .map(|(g, covs)| {
            (
                g.clone(),
                GroupSummary {
                    coverage: RateSummary::from_values(covs),
                    retention: RateSummary::from_values(&group_ret[g]),
                },
            )
        })
        .collect();

    Ok(ExperimentReport {
        alpha,
        mode,
        convention: convention.tag(),
        use_ensemble,
        trials: config.trials,
        mean_calibration_size: cal_sizes as f64 / config.trials as f64,
        overall: GroupSummary {
            coverage: RateSummary::from_values(&overall_cov),
            retention: RateSummary::from_values(&overall_ret),
        },
        groups,
        degenerate_trials,
    })
}

/// Kolmogorov-Smirnov statistic against Unif[0, 1]:
/// `D = sup_t |F_n(t) - t|`.
pub fn ks_statistic(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("values are finite"));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let hi = (i + 1) as f64 / n - x;
        let lo = x - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    Ok(d)
}

/// One row of the retention-gap sweep: a scorer column interpreted as one
/// noise level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub sigma: f64,
    pub mse: f64,
    pub retention_estimated: f64,
    pub retention_oracle: f64,
    pub gap: f64,
}

/// Claim-wise retention gap `|R(p_hat, tau) - R(p*, tau)|` per noise level,
/// averaged over `config.trials` seeds. Each scorer column of the config is
/// one noise level, so every level shares the same oracle scores and labels
/// within a seed.
pub fn retention_gap_sweep(config: &SimConfig, tau: f64) -> Result<Vec<GapRow>> {
    config.validate()?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidThreshold(tau));
    }
    let m = config.scorer_noise.len();
    let mut mse_acc = vec![0.0; m];
    let mut r_est_acc = vec![0.0; m];
    let mut gap_acc = vec![0.0; m];
    let mut r_star_acc = 0.0;

    for trial in 0..config.trials {
        let corpus = generate_corpus_seeded(config, derive_seed(config.seed, trial as u64))?;
        let mut n_claims = 0usize;
        let mut kept_star = 0usize;
        let mut kept_est = vec![0usize; m];
        let mut sq_err = vec![0.0; m];
        for doc in &corpus {
            for claim in &doc.claims {
                n_claims += 1;
                let p_star = claim.oracle_score.expect("synthetic corpus");
                if p_star >= tau {
                    kept_star += 1;
                }
                for (s, &p_hat) in claim.scores.iter().enumerate() {
                    if p_hat >= tau {
                        kept_est[s] += 1;
                    }
                    sq_err[s] += (p_hat - p_star) * (p_hat - p_star);
                }
            }
        }
        let r_star = kept_star as f64 / n_claims as f64;
        r_star_acc += r_star;
        for s in 0..m {
            let r_est = kept_est[s] as f64 / n_claims as f64;
            mse_acc[s] += sq_err[s] / n_claims as f64;
            r_est_acc[s] += r_est;
            gap_acc[s] += (r_est - r_star).abs();
        }
    }

    let t = config.trials as f64;
    Ok((0..m)
        .map(|s| GapRow {
            sigma: config.scorer_noise[s],
            mse: mse_acc[s] / t,
            retention_estimated: r_est_acc[s] / t,
            retention_oracle: r_star_acc / t,
            gap: gap_acc[s] / t,
        })
        .collect())
}

/// Scenario parameters for [`covariate_shift_experiment`].
#[derive(Debug, Clone)]
pub struct ShiftScenarioConfig {
    /// Pool size per trial (split into calibration and test by difficulty).
    pub n_docs: usize,
    pub claims_per_doc: (usize, usize),
    /// Scorer noise levels (M scorers).
    pub scorer_noise: Vec<f64>,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ShiftScenarioConfig {
    fn default() -> Self {
        Self {
            n_docs: 900,
            claims_per_doc: (6, 12),
            scorer_noise: vec![0.05],
            alpha: 0.1,
            trials: 100,
            seed: 0,
        }
    }
}

/// Aggregate coverage deviations of the shifted pipeline with and without
/// density-ratio resampling. Mirroring the trial protocol of the coverage
/// tables, coverage is first averaged over trials within each group and
/// the deviation |mean coverage - (1 - alpha)| is then averaged over
/// groups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftExperimentReport {
    pub trials: usize,
    pub alpha: f64,
    /// Mean over groups of |mean-over-trials group coverage - (1 - alpha)|.
    pub mean_abs_dev_uncorrected: f64,
    pub mean_abs_dev_resampled: f64,
    pub mean_coverage_uncorrected: f64,
    pub mean_coverage_resampled: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Induce a covariate shift (calibration drawn mostly from the easy,
/// high-mean-score stratum; test from the hard one), then compare
/// group-conditional coverage with and without importance resampling of
/// the calibration set toward the test feature distribution.
///
/// Documents carry a latent difficulty `d` mapping to per-claim oracle laws
/// from Beta(9, 1) at `d = 0` down to Beta(2, 4) at `d = 1`, so the
/// observable mean claim score tracks difficulty. Assignment to the
/// calibration pool is a logistic coin in the standardized mean score,
/// which keeps the two pools overlapping.
pub fn covariate_shift_experiment(config: &ShiftScenarioConfig) -> Result<ShiftExperimentReport> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidAlpha(config.alpha));
    }
    if config.trials == 0 || config.n_docs < 100 {
        return Err(Error::InvalidConfig(
            "shift scenario needs >= 1 trial and >= 100 documents".to_string(),
        ));
    }
    let convention = ConformityConvention::product();
    let m = config.scorer_noise.len();
    let target = 1.0 - config.alpha;

    let mut group_cov_plain: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut group_cov_dre: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    for trial in 0..config.trials {
        let trial_seed = derive_seed(config.seed, trial as u64);
        let mut gen = rng_from(derive_seed(trial_seed, 0xD1F));
        let noises: Vec<Option<Normal<f64>>> = config
            .scorer_noise
            .iter()
            .map(|s| (*s > 0.0).then(|| Normal::new(0.0, *s).expect("sigma >= 0")))
            .collect();

        let mut pool = Vec::with_capacity(config.n_docs);
        for i in 0..config.n_docs {
            let group = if gen.gen_bool(0.5) { "lowrisk" } else { "highrisk" };
            // group difficulty ranges overlap but differ in center
            let difficulty: f64 = if group == "lowrisk" {
                gen.gen_range(0.0..0.8)
            } else {
                gen.gen_range(0.2..1.0)
            };
            let a = 9.0 - 7.0 * difficulty;
            let b = 1.0 + 3.0 * difficulty;
            let beta = Beta::new(a, b).expect("positive parameters");
            let n_claims = gen.gen_range(config.claims_per_doc.0..=config.claims_per_doc.1);
            let claims = (0..n_claims)
                .map(|j| {
                    let p_star: f64 = beta.sample(&mut gen);
                    let label = gen.gen::<f64>() < p_star;
                    let scores = noises
                        .iter()
                        .map(|noise| match noise {
                            None => p_star,
                            Some(nd) => (p_star + nd.sample(&mut gen))
                                .clamp(DEFAULT_EPSILON, 1.0 - DEFAULT_EPSILON),
                        })
                        .collect();
                    Claim {
                        index: j,
                        label: Some(label),
                        scores,
                        oracle_score: Some(p_star),
                    }
                })
                .collect();
            pool.push(Document {
                id: format!("t{trial}-d{i:05}"),
                group: group.to_string(),
                prompt_len: Some(gen.gen_range(5..120)),
                response_len: Some(gen.gen_range(30..400)),
                claims,
            });
        }

        // standardized mean score drives the calibration/test coin
        let mean_scores: Vec<f64> = pool.iter().map(|d| extract_features(d).mean_score).collect();
        let center = mean_scores.iter().sum::<f64>() / mean_scores.len() as f64;
        let spread = (mean_scores
            .iter()
            .map(|s| (s - center) * (s - center))
            .sum::<f64>()
            / mean_scores.len() as f64)
            .sqrt()
            .max(1e-6);
        let mut cal = Vec::new();
        let mut test = Vec::new();
        for (doc, ms) in pool.into_iter().zip(&mean_scores) {
            let p_cal = sigmoid(3.0 * (ms - center) / spread);
            if gen.gen::<f64>() < p_cal {
                cal.push(doc);
            } else {
                test.push(doc);
            }
        }
        if cal.len() < 20 || test.len() < 20 {
            return Err(Error::InvalidConfig(
                "shift assignment produced a near-empty pool".to_string(),
            ));
        }

        let plan = WeightPlan::uniform(m);
        let model = calibrate(
            &cal,
            config.alpha,
            &convention,
            CalibrationMode::Group,
            &plan,
            trial_seed,
        )?;
        let evals = doc_evals_for(&model, &test, trial_seed)?;
        for (g, (cov, _)) in per_group_rates(&evals) {
            group_cov_plain.entry(g).or_default().push(cov);
        }

        let ratio_model = fit_density_ratio(&cal, &test, &RatioFitConfig::default())?;
        let ratios = ratio_model.ratios_for(&cal);
        let resampled = resample_calibration(&cal, &ratios, trial_seed)?;
        let model_dre = calibrate(
            &resampled,
            config.alpha,
            &convention,
            CalibrationMode::Group,
            &plan,
            trial_seed,
        )?;
        let evals_dre = doc_evals_for(&model_dre, &test, trial_seed)?;
        for (g, (cov, _)) in per_group_rates(&evals_dre) {
            group_cov_dre.entry(g).or_default().push(cov);
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let summarize = |groups: &BTreeMap<String, Vec<f64>>| {
        let devs: Vec<f64> = groups.values().map(|covs| (mean(covs) - target).abs()).collect();
        let all: Vec<f64> = groups.values().flatten().copied().collect();
        (mean(&devs), mean(&all))
    };
    let (dev_plain, cov_plain) = summarize(&group_cov_plain);
    let (dev_dre, cov_dre) = summarize(&group_cov_dre);
    Ok(ShiftExperimentReport {
        trials: config.trials,
        alpha: config.alpha,
        mean_abs_dev_uncorrected: dev_plain,
        mean_abs_dev_resampled: dev_dre,
        mean_coverage_uncorrected: cov_plain,
        mean_coverage_resampled: cov_dre,
    })
}

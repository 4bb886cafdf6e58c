//! Weighted multi-scorer aggregation and constrained weight optimization.
//!
//! The combined score of a claim is the convex combination
//! `p_ens = sum_m w_m p_m` of its M base scores. Weights are chosen per
//! group to minimize the mean per-document false-positive rate of the
//! claim-wise threshold filter, subject to the mean true-positive rate
//! staying at or above `1 - delta`, where the threshold is the empirical
//! delta-quantile of combined scores among true claims.
//!
//! The solver is a budgeted random search over the simplex (symmetric
//! Dirichlet(1) draws plus every vertex and the uniform point), followed by
//! greedy pairwise mass-transfer polish with step halving. M is small in
//! practice, so derivative-free search is exact enough and fully
//! reproducible from the seed.

use rand_distr::{Distribution, Exp1};

use crate::filter::apply_threshold_filter;
use crate::rng;
use crate::types::{uniform_weights, validate_simplex, Document, Error, Result};

/// Search budget and constraint tolerance for [`optimize_weights`].
#[derive(Debug, Clone)]
pub struct WeightSearchConfig {
    /// TPR floor is `1 - delta`.
    pub delta: f64,
    /// Number of random simplex candidates (vertices and the uniform point
    /// are always added on top).
    pub budget: usize,
    /// Rounds of pairwise coordinate polish; the step is halved each round.
    pub polish_steps: usize,
    pub seed: u64,
}

impl Default for WeightSearchConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            budget: 512,
            polish_steps: 3,
            seed: 0,
        }
    }
}

impl WeightSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidDelta(self.delta));
        }
        if self.budget == 0 {
            return Err(Error::InvalidConfig("budget must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Result of the weight search with the rates it achieved on the
/// optimization set.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WeightSearchOutcome {
    pub weights: Vec<f64>,
    pub mean_tpr: f64,
    pub mean_fpr: f64,
    /// The delta-quantile threshold at which the rates were evaluated.
    pub threshold: f64,
    /// False when no candidate met the TPR floor and the uniform fallback
    /// was returned.
    pub feasible: bool,
}

/// Convex combination of the N x M score matrix rows under simplex `w`.
pub fn ensemble_scores(score_matrix: &[Vec<f64>], w: &[f64]) -> Result<Vec<f64>> {
    validate_simplex(w)?;
    let mut out = Vec::with_capacity(score_matrix.len());
    for row in score_matrix {
        if row.len() != w.len() {
            return Err(Error::DimensionMismatch {
                expected: w.len(),
                actual: row.len(),
            });
        }
        let p: f64 = row.iter().zip(w).map(|(s, wi)| s * wi).sum();
        // convexity keeps p in [0, 1]; clamp guards accumulated rounding
        out.push(p.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Combined scores for one document.
pub fn doc_ensemble_scores(doc: &Document, w: &[f64]) -> Result<Vec<f64>> {
    validate_simplex(w)?;
    doc.claims
        .iter()
        .map(|c| {
            if c.scores.len() != w.len() {
                return Err(Error::DimensionMismatch {
                    expected: w.len(),
                    actual: c.scores.len(),
                });
            }
            Ok(c.scores
                .iter()
                .zip(w)
                .map(|(s, wi)| s * wi)
                .sum::<f64>()
                .clamp(0.0, 1.0))
        })
        .collect()
}

/// Empirical delta-quantile of combined scores among true claims, pooled
/// over the corpus: `inf{ t : (1/N1) sum 1{p_ens <= t} >= delta }`,
/// evaluated over the observed true-claim scores.
pub fn delta_threshold(docs: &[Document], w: &[f64], delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    let mut true_scores = Vec::new();
    for doc in docs {
        let combined = doc_ensemble_scores(doc, w)?;
        for (claim, p) in doc.claims.iter().zip(&combined) {
            if claim.label == Some(true) {
                true_scores.push(*p);
            }
        }
    }
    delta_threshold_from_scores(&mut true_scores, delta)
}

fn delta_threshold_from_scores(true_scores: &mut [f64], delta: f64) -> Result<f64> {
    if true_scores.is_empty() {
        return Err(Error::NoTrueClaims);
    }
    true_scores.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let n = true_scores.len();
    for i in 0..n {
        // advance to the last duplicate so the CDF at this value is complete
        if i + 1 < n && true_scores[i + 1] == true_scores[i] {
            continue;
        }
        if (i + 1) as f64 / n as f64 >= delta {
            return Ok(true_scores[i]);
        }
    }
    Ok(true_scores[n - 1])
}

/// Per-document rates of the claim-wise threshold filter:
/// `fpr = |retained ∩ false| / max(1, #false)` and the analogous TPR over
/// true claims. The `max(1, ·)` guard makes a document with no false claims
/// contribute 0 to the FPR rather than an undefined ratio.
pub fn doc_rates(doc: &Document, combined_scores: &[f64], tau: f64) -> Result<(f64, f64)> {
    if combined_scores.len() != doc.claims.len() {
        return Err(Error::DimensionMismatch {
            expected: doc.claims.len(),
            actual: combined_scores.len(),
        });
    }
    let mut n_true = 0usize;
    let mut n_false = 0usize;
    for claim in &doc.claims {
        match claim.label {
            Some(true) => n_true += 1,
            Some(false) => n_false += 1,
            None => {
                return Err(Error::MissingLabel {
                    doc_id: doc.id.clone(),
                    claim: claim.index,
                })
            }
        }
    }
    let retained = apply_threshold_filter(combined_scores, tau);
    let mut kept_true = 0usize;
    let mut kept_false = 0usize;
    for &j in &retained {
        if doc.claims[j].label == Some(true) {
            kept_true += 1;
        } else {
            kept_false += 1;
        }
    }
    let tpr = kept_true as f64 / n_true.max(1) as f64;
    let fpr = kept_false as f64 / n_false.max(1) as f64;
    Ok((tpr, fpr))
}

struct Evaluation {
    tpr: f64,
    fpr: f64,
    threshold: f64,
}

fn evaluate_weights(docs: &[Document], w: &[f64], delta: f64) -> Result<Evaluation> {
    let tau = delta_threshold(docs, w, delta)?;
    let mut tpr_sum = 0.0;
    let mut fpr_sum = 0.0;
    for doc in docs {
        let combined = doc_ensemble_scores(doc, w)?;
        let (tpr, fpr) = doc_rates(doc, &combined, tau)?;
        tpr_sum += tpr;
        fpr_sum += fpr;
    }
    let n = docs.len() as f64;
    Ok(Evaluation {
        tpr: tpr_sum / n,
        fpr: fpr_sum / n,
        threshold: tau,
    })
}

/// `(fpr, tpr, w)` ordering: lower FPR first, then higher TPR, then
/// lexicographically smallest weight vector.
fn better_candidate(fpr_a: f64, tpr_a: f64, w_a: &[f64], fpr_b: f64, tpr_b: f64, w_b: &[f64]) -> bool {
    if fpr_a != fpr_b {
        return fpr_a < fpr_b;
    }
    if tpr_a != tpr_b {
        return tpr_a > tpr_b;
    }
    w_a.iter()
        .zip(w_b)
        .find(|(a, b)| a != b)
        .map(|(a, b)| a < b)
        .unwrap_or(false)
}

/// Minimize mean FPR over the weight simplex subject to mean TPR >= 1 - delta.
///
/// Candidates are `budget` symmetric Dirichlet(1) draws plus every vertex
/// and the uniform point, so the returned FPR never exceeds the best
/// single-scorer vertex. The winner is refined by greedy pairwise mass
/// transfer with step halving. When the objective cannot distinguish the
/// uniform point from the best candidate, uniform is returned; when no
/// candidate is feasible, uniform is returned with `feasible = false`.
pub fn optimize_weights(docs: &[Document], config: &WeightSearchConfig) -> Result<WeightSearchOutcome> {
    config.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let m = docs[0].n_scorers();
    let uniform = uniform_weights(m);
    let uniform_eval = evaluate_weights(docs, &uniform, config.delta)?;
    if m == 1 {
        return Ok(WeightSearchOutcome {
            weights: uniform,
            mean_tpr: uniform_eval.tpr,
            mean_fpr: uniform_eval.fpr,
            threshold: uniform_eval.threshold,
            feasible: uniform_eval.tpr >= 1.0 - config.delta,
        });
    }

    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(config.budget + m + 1);
    for i in 0..m {
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        candidates.push(v);
    }
    candidates.push(uniform.clone());
    let mut gen = rng::rng_from(rng::derive_seed(config.seed, 0x77)); // search stream
    for _ in 0..config.budget {
        // Dirichlet(1): normalized Exp(1) draws
        let draws: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut gen)).collect();
        let total: f64 = draws.iter().sum();
        if total <= 0.0 {
            candidates.push(uniform.clone());
        } else {
            candidates.push(draws.iter().map(|x| x / total).collect());
        }
    }

    let floor = 1.0 - config.delta;
    let mut best: Option<(Vec<f64>, Evaluation)> = None;
    for w in candidates {
        let ev = evaluate_weights(docs, &w, config.delta)?;
        if ev.tpr < floor {
            continue;
        }
        let replace = match &best {
            None => true,
            Some((bw, be)) => better_candidate(ev.fpr, ev.tpr, &w, be.fpr, be.tpr, bw),
        };
        if replace {
            best = Some((w, ev));
        }
    }

    let (mut w, mut ev) = match best {
        Some(b) => b,
        None => {
            return Ok(WeightSearchOutcome {
                weights: uniform,
                mean_tpr: uniform_eval.tpr,
                mean_fpr: uniform_eval.fpr,
                threshold: uniform_eval.threshold,
                feasible: false,
            });
        }
    };

    // Pairwise mass-transfer polish; accepts only strict (FPR, TPR)
    // improvements that stay feasible, so vertex dominance is preserved.
    let mut step: f64 = 0.25;
    for _ in 0..config.polish_steps {
        let mut sweeps = 0;
        loop {
            let mut improved = false;
            for from in 0..m {
                for to in 0..m {
                    if from == to || w[from] <= 0.0 {
                        continue;
                    }
                    let shift = step.min(w[from]);
                    let mut cand = w.clone();
                    cand[from] -= shift;
                    cand[to] += shift;
                    let cev = evaluate_weights(docs, &cand, config.delta)?;
                    if cev.tpr >= floor
                        && (cev.fpr < ev.fpr || (cev.fpr == ev.fpr && cev.tpr > ev.tpr))
                    {
                        w = cand;
                        ev = cev;
                        improved = true;
                    }
                }
            }
            sweeps += 1;
            if !improved || sweeps >= 16 {
                break;
            }
        }
        step /= 2.0;
    }

    // Objective flat against uniform: prefer the uniform point.
    if uniform_eval.tpr >= floor && ev.fpr == uniform_eval.fpr && ev.tpr == uniform_eval.tpr {
        return Ok(WeightSearchOutcome {
            weights: uniform,
            mean_tpr: uniform_eval.tpr,
            mean_fpr: uniform_eval.fpr,
            threshold: uniform_eval.threshold,
            feasible: true,
        });
    }

    Ok(WeightSearchOutcome {
        weights: w,
        mean_tpr: ev.tpr,
        mean_fpr: ev.fpr,
        threshold: ev.threshold,
        feasible: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Claim;
    use rand::{Rng, SeedableRng};

    fn labeled_doc(id: &str, rows: &[(bool, Vec<f64>)]) -> Document {
        Document {
            id: id.to_string(),
            group: "g".to_string(),
            prompt_len: None,
            response_len: None,
            claims: rows
                .iter()
                .enumerate()
                .map(|(i, (l, s))| Claim::new(i, Some(*l), s.clone()))
                .collect(),
        }
    }

    #[test]
    fn vertex_weight_selects_column() {
        let matrix = vec![vec![0.9, 0.1, 0.5], vec![0.2, 0.8, 0.4]];
        let out = ensemble_scores(&matrix, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(out, vec![0.9, 0.2]);
    }

    #[test]
    fn uniform_weight_is_mean() {
        let matrix = vec![vec![0.9, 0.6, 0.3]];
        let out = ensemble_scores(&matrix, &uniform_weights(3)).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn midpoint_weight() {
        let matrix = vec![vec![0.8, 0.4]];
        let out = ensemble_scores(&matrix, &[0.5, 0.5]).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ensemble_rejects_bad_inputs() {
        assert!(ensemble_scores(&[vec![0.5]], &[0.5, 0.6]).is_err());
        assert!(ensemble_scores(&[vec![0.5, 0.5]], &[1.0]).is_err());
    }

    #[test]
    fn delta_threshold_enumerates_cdf() {
        let doc = labeled_doc(
            "a",
            &[
                (true, vec![0.2]),
                (true, vec![0.4]),
                (true, vec![0.6]),
                (true, vec![0.8]),
                (true, vec![1.0]),
                (false, vec![0.9]),
            ],
        );
        let docs = vec![doc];
        assert_eq!(delta_threshold(&docs, &[1.0], 0.2).unwrap(), 0.2);
        assert_eq!(delta_threshold(&docs, &[1.0], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn delta_threshold_single_true_claim() {
        let docs = vec![labeled_doc("a", &[(true, vec![0.7])])];
        assert_eq!(delta_threshold(&docs, &[1.0], 0.5).unwrap(), 0.7);
    }

    #[test]
    fn delta_threshold_needs_true_claims() {
        let docs = vec![labeled_doc("a", &[(false, vec![0.7])])];
        assert!(matches!(
            delta_threshold(&docs, &[1.0], 0.5),
            Err(Error::NoTrueClaims)
        ));
    }

    #[test]
    fn doc_rates_by_hand() {
        // labels [1,1,0,0]; threshold keeps claims 0 and 2
        let doc = labeled_doc(
            "a",
            &[
                (true, vec![0.9]),
                (true, vec![0.2]),
                (false, vec![0.8]),
                (false, vec![0.1]),
            ],
        );
        let combined = doc_ensemble_scores(&doc, &[1.0]).unwrap();
        let (tpr, fpr) = doc_rates(&doc, &combined, 0.5).unwrap();
        assert_eq!((tpr, fpr), (0.5, 0.5));
    }

    #[test]
    fn doc_rates_guards() {
        let no_false = labeled_doc("a", &[(true, vec![0.9]), (true, vec![0.8])]);
        let combined = doc_ensemble_scores(&no_false, &[1.0]).unwrap();
        let (_, fpr) = doc_rates(&no_false, &combined, 0.5).unwrap();
        assert_eq!(fpr, 0.0);

        let empty_retained = labeled_doc("b", &[(true, vec![0.1]), (false, vec![0.2])]);
        let combined = doc_ensemble_scores(&empty_retained, &[1.0]).unwrap();
        let (tpr, fpr) = doc_rates(&empty_retained, &combined, 0.9).unwrap();
        assert_eq!((tpr, fpr), (0.0, 0.0));
    }

    fn noisy_corpus(seed: u64, n_docs: usize, sigmas: &[f64]) -> Vec<Document> {
        // scorer m reports the oracle plus N(0, sigma_m^2) noise
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n_docs)
            .map(|i| {
                let n = rng.gen_range(4..10);
                let rows: Vec<(bool, Vec<f64>)> = (0..n)
                    .map(|_| {
                        let p: f64 = rng.gen();
                        let label = rng.gen::<f64>() < p;
                        let scores = sigmas
                            .iter()
                            .map(|s| {
                                let noise: f64 = rng.gen::<f64>() * 2.0 - 1.0;
                                (p + noise * s * 1.7).clamp(0.0, 1.0)
                            })
                            .collect();
                        (label, scores)
                    })
                    .collect();
                labeled_doc(&format!("d{i}"), &rows)
            })
            .collect()
    }

    fn pure_noise_corpus(seed: u64, n_docs: usize) -> Vec<Document> {
        // scorer 0 is nearly oracle; scorers 1-2 are independent noise.
        // p* is bounded away from 0 so zero-true-claim documents (which pin
        // their TPR contribution at 0) essentially never occur.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = rand_distr::Normal::new(0.0, 0.01).unwrap();
        (0..n_docs)
            .map(|i| {
                let n = rng.gen_range(22..28);
                let rows: Vec<(bool, Vec<f64>)> = (0..n)
                    .map(|_| {
                        let p: f64 = 0.25 + 0.75 * rng.gen::<f64>();
                        let label = rng.gen::<f64>() < p;
                        let near =
                            (p + rand_distr::Distribution::sample(&noise, &mut rng)).clamp(0.0, 1.0);
                        (label, vec![near, rng.gen(), rng.gen()])
                    })
                    .collect();
                labeled_doc(&format!("d{i}"), &rows)
            })
            .collect()
    }

    #[test]
    fn near_oracle_scorer_dominates() {
        let docs = pure_noise_corpus(2, 250);
        let cfg = WeightSearchConfig {
            seed: 17,
            ..Default::default()
        };
        let out = optimize_weights(&docs, &cfg).unwrap();
        assert!(out.feasible);
        assert!(
            out.weights[0] >= 0.9,
            "expected mass on the informative scorer, got {:?}",
            out.weights
        );
        // dominance over every feasible vertex
        for m in 0..3 {
            let mut v = vec![0.0; 3];
            v[m] = 1.0;
            let ev = evaluate_weights(&docs, &v, cfg.delta).unwrap();
            if ev.tpr >= 1.0 - cfg.delta {
                assert!(out.mean_fpr <= ev.fpr + 1e-9, "vertex {m} beats result");
            }
        }
    }

    #[test]
    fn identical_columns_return_uniform() {
        // grid-valued scores give the TPR constraint structural slack (the
        // quantile lands on an atom), so feasibility is not a coin flip
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let docs: Vec<Document> = (0..150)
            .map(|i| {
                let rows: Vec<(bool, Vec<f64>)> = (0..8)
                    .map(|_| {
                        let p = (rng.gen_range(1..10) as f64) / 10.0;
                        (rng.gen::<f64>() < p, vec![p, p, p])
                    })
                    .collect();
                labeled_doc(&format!("d{i}"), &rows)
            })
            .collect();
        let out = optimize_weights(&docs, &WeightSearchConfig::default()).unwrap();
        assert_eq!(out.weights, uniform_weights(3));
        assert!(out.feasible);
    }

    #[test]
    fn infeasible_falls_back_to_uniform() {
        // Identical scorer columns, so w is irrelevant. The pooled
        // delta-quantile of true scores {0.1, 0.9 x 9} at delta = 0.15 is
        // 0.9 (cdf(0.1) = 0.1 < 0.15), which drops doc a's only claim:
        // mean doc TPR = (0 + 1)/2 = 0.5 < 1 - delta = 0.85 for every w.
        let high_rows = vec![(true, vec![0.9, 0.9]); 9];
        let docs = vec![
            labeled_doc("a", &[(true, vec![0.1, 0.1])]),
            labeled_doc("b", &high_rows),
        ];
        let cfg = WeightSearchConfig {
            delta: 0.15,
            budget: 32,
            ..Default::default()
        };
        let out = optimize_weights(&docs, &cfg).unwrap();
        assert!(!out.feasible);
        assert_eq!(out.weights, uniform_weights(2));
    }

    #[test]
    fn seed_determinism() {
        let docs = noisy_corpus(77, 60, &[0.05, 0.3, 0.3]);
        let cfg = WeightSearchConfig {
            budget: 64,
            seed: 123,
            ..Default::default()
        };
        let a = optimize_weights(&docs, &cfg).unwrap();
        let b = optimize_weights(&docs, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.mean_fpr, b.mean_fpr);
    }

    #[test]
    fn constraint_holds_when_feasible() {
        let docs = noisy_corpus(99, 80, &[0.05, 0.2]);
        let cfg = WeightSearchConfig {
            budget: 64,
            seed: 5,
            ..Default::default()
        };
        let out = optimize_weights(&docs, &cfg).unwrap();
        if out.feasible {
            let ev = evaluate_weights(&docs, &out.weights, cfg.delta).unwrap();
            assert!(ev.tpr >= 1.0 - cfg.delta);
            assert_eq!(ev.tpr, out.mean_tpr);
            assert_eq!(ev.fpr, out.mean_fpr);
        }
    }
}

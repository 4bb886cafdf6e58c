//! Conformity scores, conformal quantiles, and marginal / group-conditional
//! calibration.
//!
//! The conformity score of a labeled document is the smallest threshold at
//! which its filtered set contains only true claims:
//!
//! ```text
//! E = inf{ tau in [0, 1] : filter(p, tau, u) ⊆ A }
//! ```
//!
//! Because retained sets are prefixes of the score ordering, E has a closed
//! form: with `j*` the first false-claim rank in the permutation and `G` the
//! prefix aggregates, `E = G_{j*-1} - u (G_{j*-1} - G_{j*})`, and `E = 0`
//! when the document has no false claims. The closed form satisfies the
//! event equivalence `{E <= tau} <=> {filter(tau, u) ⊆ A}` for every `tau`
//! and the same `u`, which is what reduces document-level coverage to a
//! scalar quantile computation.
//!
//! Calibration collects one score per labeled document and stores the
//! `ceil((1 - alpha)(n + 1))`-th order statistic as the threshold — the
//! rank the finite-sample guarantee actually needs, which normalizes by
//! `n + 1` rather than `n`. When the rank exceeds the group size the
//! group's threshold degenerates to 1.0 (the filter retains nothing) and
//! the group is flagged rather than silently undercovered. Groups unseen
//! at calibration time fall back to the marginal threshold.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::ensemble::doc_ensemble_scores;
use crate::filter::{apply_multiplicative_filter, prefix_aggregate};
use crate::rng::doc_draw_occ;
use crate::types::{
    uniform_weights, validate_corpus, validate_simplex, Aggregation, CalibrationMode,
    CalibrationModel, ConformityConvention, Document, Error, Result,
};

/// One calibration document's conformity score and the draw that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformityRecord {
    pub doc_id: String,
    pub group: String,
    pub e: f64,
    pub u: f64,
}

/// Ensemble weights to combine scores with: one simplex vector per group,
/// plus a fallback for groups without an entry.
#[derive(Debug, Clone)]
pub struct WeightPlan {
    pub per_group: BTreeMap<String, Vec<f64>>,
    pub fallback: Vec<f64>,
}

impl WeightPlan {
    pub fn uniform(n_scorers: usize) -> Self {
        Self {
            per_group: BTreeMap::new(),
            fallback: uniform_weights(n_scorers),
        }
    }

    pub fn resolve(&self, group: &str) -> &[f64] {
        self.per_group
            .get(group)
            .map(Vec::as_slice)
            .unwrap_or(&self.fallback)
    }

    fn validate(&self, n_scorers: usize) -> Result<()> {
        validate_simplex(&self.fallback)?;
        if self.fallback.len() != n_scorers {
            return Err(Error::DimensionMismatch {
                expected: n_scorers,
                actual: self.fallback.len(),
            });
        }
        for w in self.per_group.values() {
            validate_simplex(w)?;
            if w.len() != n_scorers {
                return Err(Error::DimensionMismatch {
                    expected: n_scorers,
                    actual: w.len(),
                });
            }
        }
        Ok(())
    }
}

/// Conformity score of a fully labeled document under `convention`.
///
/// `combined_scores` must align with `doc.claims`; `u` is the document's
/// randomization draw. Under the worst-case convention the score is the
/// largest combined score among false claims (the threshold filter has no
/// randomization to interpolate).
pub fn conformity_score(
    doc: &Document,
    combined_scores: &[f64],
    u: f64,
    convention: &ConformityConvention,
) -> Result<f64> {
    if combined_scores.len() != doc.claims.len() {
        return Err(Error::DimensionMismatch {
            expected: doc.claims.len(),
            actual: combined_scores.len(),
        });
    }
    if !(0.0..1.0).contains(&u) {
        return Err(Error::InvalidDraw(u));
    }
    for claim in &doc.claims {
        if claim.label.is_none() {
            return Err(Error::MissingLabel {
                doc_id: doc.id.clone(),
                claim: claim.index,
            });
        }
    }

    if convention.variant == Aggregation::WorstCase {
        // Smallest threshold whose claim-wise filter retains no false
        // claim. Retention is inclusive (p >= tau), so the set of clean
        // thresholds is open at the max false score; take the next float
        // up so that {E <= tau} <=> {filter ⊆ A} holds exactly even when
        // scores tie. Without this, tied scores (e.g. clamped at 1 - eps)
        // silently break the coverage guarantee.
        let worst = doc
            .claims
            .iter()
            .zip(combined_scores)
            .filter(|(c, _)| c.label == Some(false))
            .map(|(_, p)| *p)
            .fold(f64::NEG_INFINITY, f64::max);
        return Ok(if worst.is_finite() {
            worst.next_up().min(1.0)
        } else {
            0.0
        });
    }

    let agg = prefix_aggregate(combined_scores, convention)?;
    let first_false_rank = agg
        .permutation
        .iter()
        .position(|&idx| doc.claims[idx].label == Some(false));
    match first_false_rank {
        None => Ok(0.0),
        Some(r) => {
            // rank is 1-based: j* = r + 1
            let g_prev = agg.values[r];
            let g_at = agg.values[r + 1];
            Ok((g_prev - u * (g_prev - g_at)).clamp(0.0, 1.0))
        }
    }
}

/// Rank for the conformal quantile: `ceil((1 - alpha)(n + 1))`.
///
/// The product is nudged down by 1e-9 before the ceiling so that float
/// representation error cannot push an exactly-integral rank up by one;
/// valid for n below ~1e8.
fn conformal_rank(n: usize, alpha: f64) -> usize {
    let raw = (1.0 - alpha) * (n + 1) as f64;
    ((raw - 1e-9).ceil() as usize).max(1)
}

fn quantile_with_flag(values: &[f64], alpha: f64) -> (f64, bool) {
    let n = values.len();
    let k = conformal_rank(n, alpha);
    if k > n {
        return (1.0, true);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("conformity scores are finite"));
    (sorted[k - 1], false)
}

/// The `ceil((1 - alpha)(n + 1))`-th order statistic of the conformity
/// scores; 1.0 (maximally conservative) when the rank exceeds n.
pub fn conformal_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("conformity scores"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(quantile_with_flag(values, alpha).0)
}

/// Density-ratio-weighted conformal quantile:
/// `inf{ q : sum w_i 1{S_i > q} / sum w_i <= alpha }`, evaluated over the
/// observed score values plus 1.0.
pub fn weighted_conformal_quantile(scores: &[f64], weights: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    if scores.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: weights.len(),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidSimplex(
            "weights must be nonnegative and finite".to_string(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }

    let mut pairs: Vec<(f64, f64)> = scores.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are finite"));
    // tails[i] = total weight of scores strictly greater than pairs[i].0;
    // computed per run of tied values, from the right
    let n = pairs.len();
    let mut tails = vec![0.0; n];
    let mut suffix = 0.0;
    let mut hi = n;
    while hi > 0 {
        let value = pairs[hi - 1].0;
        let mut lo = hi - 1;
        while lo > 0 && pairs[lo - 1].0 == value {
            lo -= 1;
        }
        // every position in a run of ties shares the strict-greater tail
        for tail in &mut tails[lo..hi] {
            *tail = suffix;
        }
        for pair in &pairs[lo..hi] {
            suffix += pair.1;
        }
        hi = lo;
    }
    for (i, (score, _)) in pairs.iter().enumerate() {
        if i > 0 && pairs[i - 1].0 == *score {
            continue;
        }
        if tails[i] / total <= alpha {
            return Ok(*score);
        }
    }
    // the largest observed score always qualifies (empty tail), but keep the
    // candidate 1.0 as the formal upper end
    Ok(1.0)
}

/// Conformity scores for every document of a labeled corpus, with weights
/// resolved per group and one draw per document derived from
/// `(seed, doc id, occurrence)`. The occurrence counter separates draws for
/// repeated ids, which importance resampling produces.
pub fn conformity_records(
    docs: &[Document],
    plan: &WeightPlan,
    convention: &ConformityConvention,
    seed: u64,
) -> Result<Vec<ConformityRecord>> {
    let stats = validate_corpus(docs, true)?;
    plan.validate(stats.n_scorers)?;
    convention.validate()?;

    let mut seen: HashMap<&str, u64> = HashMap::new();
    let mut records = Vec::with_capacity(docs.len());
    for doc in docs {
        let occ = seen.entry(doc.id.as_str()).or_insert(0);
        let u = doc_draw_occ(seed, &doc.id, *occ);
        *occ += 1;
        let combined = doc_ensemble_scores(doc, plan.resolve(&doc.group))?;
        let e = conformity_score(doc, &combined, u, convention)?;
        records.push(ConformityRecord {
            doc_id: doc.id.clone(),
            group: doc.group.clone(),
            e,
            u,
        });
    }
    Ok(records)
}

/// Calibrate thresholds on a fully labeled corpus and freeze the model.
///
/// In group mode one threshold is stored per observed group; the marginal
/// threshold over all pooled scores is always stored as the fallback for
/// unseen groups. Groups whose quantile rank exceeds their size receive the
/// degenerate threshold 1.0 and are listed in `degenerate_groups`.
pub fn calibrate(
    docs: &[Document],
    alpha: f64,
    convention: &ConformityConvention,
    mode: CalibrationMode,
    plan: &WeightPlan,
    seed: u64,
) -> Result<CalibrationModel> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let stats = validate_corpus(docs, true)?;
    let records = conformity_records(docs, plan, convention, seed)?;

    let mut grouped: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &records {
        grouped.entry(r.group.as_str()).or_default().push(r.e);
    }
    let all: Vec<f64> = records.iter().map(|r| r.e).collect();
    let (marginal_threshold, marginal_degenerate) = quantile_with_flag(&all, alpha);

    let mut thresholds = BTreeMap::new();
    let mut degenerate_groups = Vec::new();
    if mode == CalibrationMode::Group {
        for (group, es) in &grouped {
            let (t, degenerate) = quantile_with_flag(es, alpha);
            thresholds.insert(group.to_string(), t);
            if degenerate {
                degenerate_groups.push(group.to_string());
            }
        }
    } else if marginal_degenerate {
        degenerate_groups.push("marginal".to_string());
    }

    let weights: BTreeMap<String, Vec<f64>> = grouped
        .keys()
        .map(|g| (g.to_string(), plan.resolve(g).to_vec()))
        .collect();
    let calibration_counts = grouped
        .iter()
        .map(|(g, es)| (g.to_string(), es.len()))
        .collect();

    let model = CalibrationModel {
        alpha,
        convention: convention.clone(),
        mode,
        n_scorers: stats.n_scorers,
        weights,
        fallback_weights: plan.fallback.clone(),
        thresholds,
        marginal_threshold,
        calibration_counts,
        seed,
        delta: None,
        degenerate_groups,
    };
    model.validate()?;
    Ok(model)
}

/// Result of filtering one document through a calibrated model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterOutcome {
    /// Retained claim indices, ascending.
    pub retained: Vec<usize>,
    pub threshold: f64,
    /// The group whose threshold was applied, or "marginal".
    pub group_used: String,
    /// Set when a group-mode model saw an unknown group and fell back to
    /// the marginal threshold.
    pub fallback: bool,
}

/// Filter an (unlabeled) document with a frozen model and the document's
/// randomization draw `u`.
pub fn filter_with_model(
    model: &CalibrationModel,
    doc: &Document,
    u: f64,
) -> Result<FilterOutcome> {
    if doc.claims.is_empty() {
        return Err(Error::EmptyClaims {
            doc_id: doc.id.clone(),
        });
    }
    if doc.n_scorers() != model.n_scorers {
        return Err(Error::ScorerCountMismatch {
            expected: model.n_scorers,
            actual: doc.n_scorers(),
        });
    }
    let weights = model
        .weights
        .get(&doc.group)
        .map(Vec::as_slice)
        .unwrap_or(&model.fallback_weights);
    let (threshold, group_used, fallback) = match model.mode {
        CalibrationMode::Group => match model.thresholds.get(&doc.group) {
            Some(t) => (*t, doc.group.clone(), false),
            None => (model.marginal_threshold, "marginal".to_string(), true),
        },
        CalibrationMode::Marginal => (model.marginal_threshold, "marginal".to_string(), false),
    };
    let combined = doc_ensemble_scores(doc, weights)?;
    let retained = apply_multiplicative_filter(&combined, threshold, u, &model.convention)?;
    Ok(FilterOutcome {
        retained,
        threshold,
        group_used,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Claim;
    use rand::{Rng, SeedableRng};

    fn doc_with(labels: &[bool], scores: &[f64]) -> Document {
        Document {
            id: "t".to_string(),
            group: "g".to_string(),
            prompt_len: None,
            response_len: None,
            claims: labels
                .iter()
                .zip(scores)
                .enumerate()
                .map(|(i, (l, s))| Claim::new(i, Some(*l), vec![*s]))
                .collect(),
        }
    }

    /// Brute-force infimum over a tau grid; the grid point is at most one
    /// step above the true infimum.
    fn grid_infimum(doc: &Document, scores: &[f64], u: f64, conv: &ConformityConvention) -> f64 {
        let a = doc.true_claim_set().unwrap();
        let grid = 10_000;
        for i in 0..=grid {
            let tau = i as f64 / grid as f64;
            let retained = apply_multiplicative_filter(scores, tau, u, conv).unwrap();
            if retained.iter().all(|j| a.contains(j)) {
                return tau;
            }
        }
        1.0
    }

    #[test]
    fn conformity_closed_form_first_example() {
        let conv = ConformityConvention::product();
        let doc = doc_with(&[true, false, true], &[0.9, 0.7, 0.6]);
        let scores = [0.9, 0.7, 0.6];
        let e = conformity_score(&doc, &scores, 0.5, &conv).unwrap();
        assert!((e - 0.765).abs() < 1e-9, "e = {e}");
        let grid = grid_infimum(&doc, &scores, 0.5, &conv);
        assert!((grid - e).abs() <= 1e-4 + 1e-9, "grid {grid} vs closed {e}");
    }

    #[test]
    fn conformity_zero_when_all_true() {
        let conv = ConformityConvention::product();
        let doc = doc_with(&[true, true], &[0.4, 0.9]);
        assert_eq!(conformity_score(&doc, &[0.4, 0.9], 0.7, &conv).unwrap(), 0.0);
    }

    #[test]
    fn conformity_first_claim_false() {
        let conv = ConformityConvention::product();
        let doc = doc_with(&[false, true], &[0.9, 0.5]);
        let e = conformity_score(&doc, &[0.9, 0.5], 0.2, &conv).unwrap();
        assert!((e - 0.98).abs() < 1e-9, "e = {e}");
        let grid = grid_infimum(&doc, &[0.9, 0.5], 0.2, &conv);
        assert!((grid - e).abs() <= 1e-4 + 1e-9);
    }

    #[test]
    fn conformity_worst_case_is_smallest_clean_threshold() {
        use crate::filter::apply_threshold_filter;
        let conv = ConformityConvention::worst_case();
        let doc = doc_with(&[true, false, false], &[0.9, 0.7, 0.3]);
        let e = conformity_score(&doc, &[0.9, 0.7, 0.3], 0.5, &conv).unwrap();
        assert_eq!(e, 0.7f64.next_up());
        // defining property: the filter is clean at E and dirty just below
        let truth = doc.true_claim_set().unwrap();
        let clean = apply_threshold_filter(&[0.9, 0.7, 0.3], e);
        assert!(clean.iter().all(|j| truth.contains(j)));
        let dirty = apply_threshold_filter(&[0.9, 0.7, 0.3], 0.7);
        assert!(!dirty.iter().all(|j| truth.contains(j)));

        let all_true = doc_with(&[true, true], &[0.9, 0.7]);
        assert_eq!(conformity_score(&all_true, &[0.9, 0.7], 0.5, &conv).unwrap(), 0.0);
    }

    #[test]
    fn worst_case_equivalence_survives_score_ties() {
        // several false claims tied at the same score; the coverage event
        // must still match {E <= tau} exactly at tau equal to the tie value
        let conv = ConformityConvention::worst_case();
        let scores = [0.9, 0.9, 0.9, 0.2];
        let doc = doc_with(&[true, false, false, true], &scores);
        let e = conformity_score(&doc, &scores, 0.5, &conv).unwrap();
        let truth = doc.true_claim_set().unwrap();
        for tau in [0.2, 0.9, 0.9f64.next_up(), 0.95, 1.0] {
            let retained = crate::filter::apply_threshold_filter(&scores, tau);
            let subset = retained.iter().all(|j| truth.contains(j));
            assert_eq!(e <= tau, subset, "tau = {tau}");
        }
    }

    #[test]
    fn conformity_requires_labels() {
        let conv = ConformityConvention::product();
        let mut doc = doc_with(&[true, false], &[0.9, 0.7]);
        doc.claims[1].label = None;
        assert!(matches!(
            conformity_score(&doc, &[0.9, 0.7], 0.5, &conv),
            Err(Error::MissingLabel { .. })
        ));
    }

    #[test]
    fn event_equivalence_holds_everywhere() {
        // {E <= tau} <=> {filter(tau, u) ⊆ A}: 1000 random labeled
        // documents, 100 tau values each, same u on both sides.
        let conventions = [
            ConformityConvention::product(),
            ConformityConvention::log_sum(),
            ConformityConvention::power_mean(2.0).unwrap(),
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(404);
        for case in 0..1000 {
            let n = rng.gen_range(1..10);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
            let doc = doc_with(&labels, &scores);
            let a = doc.true_claim_set().unwrap();
            let u: f64 = rng.gen();
            let conv = &conventions[case % conventions.len()];
            let e = conformity_score(&doc, &scores, u, conv).unwrap();
            for _ in 0..100 {
                let tau: f64 = rng.gen();
                let retained = apply_multiplicative_filter(&scores, tau, u, conv).unwrap();
                let subset = retained.iter().all(|j| a.contains(j));
                assert_eq!(
                    e <= tau,
                    subset,
                    "case {case}: e={e} tau={tau} u={u} scores={scores:?} labels={labels:?}"
                );
            }
        }
    }

    #[test]
    fn quantile_rank_arithmetic() {
        // k = ceil(0.8 * 5) = 4 -> 4th smallest
        assert_eq!(conformal_quantile(&[0.1, 0.2, 0.3, 0.4], 0.2).unwrap(), 0.4);
        // single point
        assert_eq!(conformal_quantile(&[0.5], 0.5).unwrap(), 0.5);
        // k = ceil(0.95 * 3) = 3 > 2 -> forced conservative
        assert_eq!(conformal_quantile(&[0.1, 0.2], 0.05).unwrap(), 1.0);
        assert!(conformal_quantile(&[], 0.1).is_err());
        assert!(conformal_quantile(&[0.5], 0.0).is_err());
        assert!(conformal_quantile(&[0.5], 1.0).is_err());
    }

    #[test]
    fn quantile_cross_checked_by_scanning_candidates() {
        // the returned threshold is the smallest observed value t with
        // #{E_i <= t} >= k
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = rng.gen_range(1..40);
            let values: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let alpha = rng.gen_range(0.01..0.99);
            let q = conformal_quantile(&values, alpha).unwrap();
            let k = conformal_rank(n, alpha);
            if k > n {
                assert_eq!(q, 1.0);
                continue;
            }
            let count_le = values.iter().filter(|v| **v <= q).count();
            assert!(count_le >= k);
            for v in &values {
                if *v < q {
                    let c = values.iter().filter(|x| **x <= *v).count();
                    assert!(c < k, "smaller candidate {v} already reaches rank {k}");
                }
            }
        }
    }

    #[test]
    fn quantile_monotone_in_alpha() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let n = rng.gen_range(1..30);
            let values: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let a1 = rng.gen_range(0.01..0.5);
            let a2 = rng.gen_range(a1..0.99);
            let q1 = conformal_quantile(&values, a1).unwrap();
            let q2 = conformal_quantile(&values, a2).unwrap();
            assert!(q1 >= q2, "alpha {a1} < {a2} but {q1} < {q2}");
        }
    }

    #[test]
    fn weighted_quantile_examples() {
        let q = weighted_conformal_quantile(&[0.1, 0.2, 0.3, 0.4], &[1.0; 4], 0.25).unwrap();
        assert_eq!(q, 0.3);
        // degenerate mass on one score
        let q = weighted_conformal_quantile(&[0.2, 0.7], &[0.0, 1.0], 0.5).unwrap();
        assert_eq!(q, 0.7);
        // all scores equal
        let q = weighted_conformal_quantile(&[0.7, 0.7, 0.7], &[1.0, 2.0, 3.0], 0.1).unwrap();
        assert_eq!(q, 0.7);
        assert!(weighted_conformal_quantile(&[0.1], &[0.0], 0.5).is_err());
        assert!(weighted_conformal_quantile(&[0.1], &[1.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn weighted_quantile_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let n = rng.gen_range(1..25);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 8.0).round() / 8.0).collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let alpha = rng.gen_range(0.05..0.95);
            let q = weighted_conformal_quantile(&scores, &weights, alpha).unwrap();
            let total: f64 = weights.iter().sum();
            let mut candidates: Vec<f64> = scores.clone();
            candidates.push(1.0);
            candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let brute = candidates
                .iter()
                .find(|q| {
                    let tail: f64 = scores
                        .iter()
                        .zip(&weights)
                        .filter(|(s, _)| **s > **q)
                        .map(|(_, w)| *w)
                        .sum();
                    tail / total <= alpha
                })
                .copied()
                .unwrap();
            assert_eq!(q, brute);
        }
    }

    fn corpus(groups: &[(&str, usize)], seed: u64, all_true: bool) -> Vec<Document> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut docs = Vec::new();
        for (group, count) in groups {
            for i in 0..*count {
                let n = rng.gen_range(2..6);
                let claims = (0..n)
                    .map(|j| {
                        let p: f64 = rng.gen();
                        let label = all_true || rng.gen::<f64>() < p;
                        Claim::new(j, Some(label), vec![p])
                    })
                    .collect();
                docs.push(Document {
                    id: format!("{group}-{i}"),
                    group: group.to_string(),
                    prompt_len: None,
                    response_len: None,
                    claims,
                });
            }
        }
        docs
    }

    #[test]
    fn calibrate_marginal_threshold_matches_quantile() {
        let docs = corpus(&[("g", 40)], 1, false);
        let conv = ConformityConvention::product();
        let plan = WeightPlan::uniform(1);
        let model = calibrate(&docs, 0.2, &conv, CalibrationMode::Marginal, &plan, 9).unwrap();
        let records = conformity_records(&docs, &plan, &conv, 9).unwrap();
        let es: Vec<f64> = records.iter().map(|r| r.e).collect();
        assert_eq!(model.marginal_threshold, conformal_quantile(&es, 0.2).unwrap());
        assert!(model.thresholds.is_empty());
        assert_eq!(model.calibration_counts["g"], 40);
    }

    #[test]
    fn calibrate_small_group_degenerates() {
        let docs = corpus(&[("A", 50), ("B", 3)], 2, false);
        let model = calibrate(
            &docs,
            0.05,
            &ConformityConvention::product(),
            CalibrationMode::Group,
            &WeightPlan::uniform(1),
            9,
        )
        .unwrap();
        // ceil(0.95 * 4) = 4 > 3
        assert_eq!(model.thresholds["B"], 1.0);
        assert_eq!(model.degenerate_groups, vec!["B".to_string()]);
        assert!(model.thresholds["A"] < 1.0);
    }

    #[test]
    fn calibrate_all_true_corpus_gives_zero_thresholds() {
        let docs = corpus(&[("A", 20), ("B", 20)], 3, true);
        let model = calibrate(
            &docs,
            0.1,
            &ConformityConvention::product(),
            CalibrationMode::Group,
            &WeightPlan::uniform(1),
            9,
        )
        .unwrap();
        assert_eq!(model.marginal_threshold, 0.0);
        assert!(model.thresholds.values().all(|t| *t == 0.0));
        // zero threshold retains everything
        let doc = &docs[0];
        let out = filter_with_model(&model, doc, 0.5).unwrap();
        assert_eq!(out.retained.len(), doc.n_claims());
    }

    #[test]
    fn filter_with_model_composition() {
        let mut thresholds = BTreeMap::new();
        thresholds.insert("A".to_string(), 0.8);
        let mut weights = BTreeMap::new();
        weights.insert("A".to_string(), vec![1.0]);
        let mut counts = BTreeMap::new();
        counts.insert("A".to_string(), 10);
        let model = CalibrationModel {
            alpha: 0.1,
            convention: ConformityConvention::product(),
            mode: CalibrationMode::Group,
            n_scorers: 1,
            weights,
            fallback_weights: vec![1.0],
            thresholds,
            marginal_threshold: 0.6,
            calibration_counts: counts,
            seed: 0,
            delta: None,
            degenerate_groups: vec![],
        };
        let doc = Document {
            id: "x".to_string(),
            group: "A".to_string(),
            prompt_len: None,
            response_len: None,
            claims: vec![
                Claim::new(0, None, vec![0.9]),
                Claim::new(1, None, vec![0.8]),
            ],
        };
        // u = 0.3 < gamma = 5/9: both retained
        let out = filter_with_model(&model, &doc, 0.3).unwrap();
        assert_eq!(out.retained, vec![0, 1]);
        assert_eq!(out.group_used, "A");
        assert!(!out.fallback);

        // unseen group falls back to the marginal threshold
        let mut other = doc.clone();
        other.group = "Z".to_string();
        let out = filter_with_model(&model, &other, 0.3).unwrap();
        assert!(out.fallback);
        assert_eq!(out.group_used, "marginal");
        assert_eq!(out.threshold, 0.6);

        // degenerate threshold retains nothing
        let mut degenerate = model.clone();
        degenerate.thresholds.insert("A".to_string(), 1.0);
        let out = filter_with_model(&degenerate, &doc, 0.3).unwrap();
        assert!(out.retained.is_empty());

        // M mismatch is a contract error naming both sides
        let mut wide = doc.clone();
        for c in &mut wide.claims {
            c.scores = vec![0.5, 0.5];
        }
        let err = filter_with_model(&model, &wide, 0.3).unwrap_err();
        assert!(matches!(
            err,
            Error::ScorerCountMismatch {
                expected: 1,
                actual: 2
            }
        ));
    }

    #[test]
    fn duplicate_ids_get_distinct_draws() {
        let docs = vec![corpus(&[("g", 1)], 5, false)[0].clone(); 3];
        let records = conformity_records(
            &docs,
            &WeightPlan::uniform(1),
            &ConformityConvention::product(),
            4,
        )
        .unwrap();
        assert_ne!(records[0].u, records[1].u);
        assert_ne!(records[1].u, records[2].u);
    }
}

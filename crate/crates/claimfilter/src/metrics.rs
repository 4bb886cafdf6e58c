//! Evaluation statistics: coverage, retention, TPR/FPR, MSE against oracle
//! scores, and Jaccard diagnostics between scorers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::calibration::{filter_with_model, FilterOutcome};
use crate::rng::doc_draw;
use crate::types::{validate_corpus, CalibrationModel, Document, Error, Result};

/// One document's filtering outcome joined with its ground truth.
#[derive(Debug, Clone)]
pub struct DocEval {
    pub group: String,
    pub retained: BTreeSet<usize>,
    pub true_set: BTreeSet<usize>,
    pub n_claims: usize,
}

/// Fraction of documents whose retained set is a subset of the true-claim
/// set. The empty retained set is always covered.
pub fn coverage(evals: &[DocEval]) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::EmptyInput("filter results"));
    }
    let covered = evals
        .iter()
        .filter(|e| e.retained.is_subset(&e.true_set))
        .count();
    Ok(covered as f64 / evals.len() as f64)
}

/// Mean over documents of the fraction of claims retained.
pub fn retention(evals: &[DocEval]) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::EmptyInput("filter results"));
    }
    let sum: f64 = evals
        .iter()
        .map(|e| e.retained.len() as f64 / e.n_claims as f64)
        .sum();
    Ok(sum / evals.len() as f64)
}

/// Claim-pooled retention / TPR / FPR / label prevalence. These satisfy the
/// decomposition `retention = rho * tpr + (1 - rho) * fpr` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledRates {
    pub retention: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub rho: f64,
}

pub fn pooled_rates(evals: &[DocEval]) -> Result<PooledRates> {
    if evals.is_empty() {
        return Err(Error::EmptyInput("filter results"));
    }
    let mut total = 0usize;
    let mut total_true = 0usize;
    let mut kept = 0usize;
    let mut kept_true = 0usize;
    for e in evals {
        total += e.n_claims;
        total_true += e.true_set.len();
        kept += e.retained.len();
        kept_true += e.retained.intersection(&e.true_set).count();
    }
    let total_false = total - total_true;
    let kept_false = kept - kept_true;
    Ok(PooledRates {
        retention: kept as f64 / total.max(1) as f64,
        tpr: kept_true as f64 / total_true.max(1) as f64,
        fpr: kept_false as f64 / total_false.max(1) as f64,
        rho: total_true as f64 / total.max(1) as f64,
    })
}

/// Mean squared deviation between estimated and oracle scores.
pub fn mse_vs_oracle(scores: &[f64], oracle_scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    if scores.len() != oracle_scores.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: oracle_scores.len(),
        });
    }
    let sum: f64 = scores
        .iter()
        .zip(oracle_scores)
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    Ok(sum / scores.len() as f64)
}

/// `1 - |A ∩ B| / |A ∪ B|`; 0 when both sets are empty.
pub fn jaccard_distance<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    1.0 - inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub coverage: f64,
    pub retention: f64,
    /// Claim-pooled true-positive rate within the group.
    pub tpr: f64,
    /// Claim-pooled false-positive rate within the group.
    pub fpr: f64,
    pub n_docs: usize,
    pub n_claims: usize,
}

/// Structured evaluation output: overall and per-group rates, plus optional
/// scorer diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub convention: Option<String>,
    pub overall: GroupMetrics,
    pub groups: BTreeMap<String, GroupMetrics>,
    /// Per-scorer MSE against oracle scores, when every claim carries one.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mse_per_scorer: Option<Vec<f64>>,
    /// Pairwise Jaccard distance between scorers' false-claim flags
    /// (score < 0.5) on ground-truth-false claims, when M >= 2.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub jaccard: Option<Vec<Vec<f64>>>,
}

fn group_metrics(evals: &[DocEval]) -> Result<GroupMetrics> {
    let pooled = pooled_rates(evals)?;
    Ok(GroupMetrics {
        coverage: coverage(evals)?,
        retention: retention(evals)?,
        tpr: pooled.tpr,
        fpr: pooled.fpr,
        n_docs: evals.len(),
        n_claims: evals.iter().map(|e| e.n_claims).sum(),
    })
}

/// Aggregate per-document outcomes into a report.
pub fn build_report(
    evals: &[DocEval],
    alpha: Option<f64>,
    convention: Option<String>,
) -> Result<EvalReport> {
    let overall = group_metrics(evals)?;
    let mut by_group: BTreeMap<&str, Vec<DocEval>> = BTreeMap::new();
    for e in evals {
        by_group.entry(e.group.as_str()).or_default().push(e.clone());
    }
    let mut groups = BTreeMap::new();
    for (g, es) in by_group {
        groups.insert(g.to_string(), group_metrics(&es)?);
    }
    Ok(EvalReport {
        alpha,
        convention,
        overall,
        groups,
        mse_per_scorer: None,
        jaccard: None,
    })
}

/// Constant flag cutoff for the Jaccard diagnostic: a scorer "flags" a
/// claim as false when its score falls below 0.5.
const FALSE_FLAG_CUTOFF: f64 = 0.5;

/// Per-scorer MSE against oracle scores (when present everywhere) and the
/// pairwise Jaccard-distance matrix of false-claim flags on
/// ground-truth-false claims (when M >= 2).
pub fn scorer_diagnostics(docs: &[Document]) -> (Option<Vec<f64>>, Option<Vec<Vec<f64>>>) {
    let m = docs.first().map_or(0, |d| d.n_scorers());
    let all_oracle = docs
        .iter()
        .flat_map(|d| &d.claims)
        .all(|c| c.oracle_score.is_some());
    let mse = if all_oracle && m > 0 {
        let mut out = Vec::with_capacity(m);
        for scorer in 0..m {
            let (mut sum, mut n) = (0.0, 0usize);
            for doc in docs {
                for claim in &doc.claims {
                    let d = claim.scores[scorer] - claim.oracle_score.unwrap();
                    sum += d * d;
                    n += 1;
                }
            }
            out.push(sum / n as f64);
        }
        Some(out)
    } else {
        None
    };

    let jaccard = if m >= 2 {
        // flagged-false sets per scorer, restricted to ground-truth-false claims
        let mut flags: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); m];
        for (di, doc) in docs.iter().enumerate() {
            for claim in &doc.claims {
                if claim.label != Some(false) {
                    continue;
                }
                for (scorer_flags, score) in flags.iter_mut().zip(&claim.scores) {
                    if *score < FALSE_FLAG_CUTOFF {
                        scorer_flags.insert((di, claim.index));
                    }
                }
            }
        }
        let matrix: Vec<Vec<f64>> = (0..m)
            .map(|a| (0..m).map(|b| jaccard_distance(&flags[a], &flags[b])).collect())
            .collect();
        Some(matrix)
    } else {
        None
    };

    (mse, jaccard)
}

/// Filter every document of a labeled corpus through the model (one draw
/// per document from `(seed, id)`) and aggregate the evaluation report.
pub fn evaluate_model(
    model: &CalibrationModel,
    docs: &[Document],
    seed: u64,
) -> Result<EvalReport> {
    validate_corpus(docs, true)?;
    let mut evals = Vec::with_capacity(docs.len());
    for doc in docs {
        let u = doc_draw(seed, &doc.id);
        let outcome: FilterOutcome = filter_with_model(model, doc, u)?;
        evals.push(DocEval {
            group: doc.group.clone(),
            retained: outcome.retained.into_iter().collect(),
            true_set: doc.true_claim_set().expect("labels validated"),
            n_claims: doc.n_claims(),
        });
    }
    let mut report = build_report(&evals, Some(model.alpha), Some(model.convention.tag()))?;
    let (mse, jaccard) = scorer_diagnostics(docs);
    report.mse_per_scorer = mse;
    report.jaccard = jaccard;
    Ok(report)
}

/// Flat CSV rendering of a report (one row per group plus "overall").
pub fn report_csv(report: &EvalReport) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["group", "coverage", "retention", "tpr", "fpr", "n_docs", "n_claims"])
        .map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
    let mut write_row = |name: &str, m: &GroupMetrics| {
        wtr.write_record([
            name,
            &m.coverage.to_string(),
            &m.retention.to_string(),
            &m.tpr.to_string(),
            &m.fpr.to_string(),
            &m.n_docs.to_string(),
            &m.n_claims.to_string(),
        ])
        .map_err(|e| Error::InvalidConfig(format!("csv: {e}")))
    };
    write_row("overall", &report.overall)?;
    for (g, m) in &report.groups {
        write_row(g, m)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn eval(group: &str, retained: &[usize], true_set: &[usize], n: usize) -> DocEval {
        DocEval {
            group: group.to_string(),
            retained: retained.iter().copied().collect(),
            true_set: true_set.iter().copied().collect(),
            n_claims: n,
        }
    }

    #[test]
    fn coverage_by_hand() {
        let evals = vec![eval("g", &[1], &[1, 2], 3), eval("g", &[1, 3], &[1, 2], 3)];
        assert_eq!(coverage(&evals).unwrap(), 0.5);
    }

    #[test]
    fn empty_retained_is_covered() {
        let evals = vec![eval("g", &[], &[], 2), eval("g", &[], &[0], 2)];
        assert_eq!(coverage(&evals).unwrap(), 1.0);
    }

    #[test]
    fn retention_by_hand() {
        let evals = vec![eval("g", &[0, 1], &[0, 1], 3), eval("g", &[0], &[0], 3)];
        assert_eq!(retention(&evals).unwrap(), 0.5);
        let full = vec![eval("g", &[0, 1], &[0, 1], 2)];
        assert_eq!(retention(&full).unwrap(), 1.0);
        let none = vec![eval("g", &[], &[0], 4)];
        assert_eq!(retention(&none).unwrap(), 0.0);
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_vs_oracle(&[0.5, 0.2], &[0.5, 0.2]).unwrap(), 0.0);
        let m = mse_vs_oracle(&[0.6, 0.3], &[0.5, 0.2]).unwrap();
        assert!((m - 0.01).abs() < 1e-12);
        let m = mse_vs_oracle(&[0.5, 0.5], &[0.0, 1.0]).unwrap();
        assert!((m - 0.25).abs() < 1e-12);
        assert!(mse_vs_oracle(&[], &[]).is_err());
    }

    #[test]
    fn jaccard_cases() {
        let a: BTreeSet<u32> = [1, 2].into_iter().collect();
        let b: BTreeSet<u32> = [2, 3].into_iter().collect();
        let empty: BTreeSet<u32> = BTreeSet::new();
        assert_eq!(jaccard_distance(&a, &a), 0.0);
        assert_eq!(jaccard_distance(&a, &empty), 1.0);
        assert_eq!(jaccard_distance(&empty, &empty), 0.0);
        assert!((jaccard_distance(&a, &b) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn decomposition_identity_exact() {
        // pooled retention = rho * TPR + (1 - rho) * FPR, to 1e-12
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let evals: Vec<DocEval> = (0..rng.gen_range(1..20))
                .map(|_| {
                    let n = rng.gen_range(1..10);
                    let true_set: Vec<usize> =
                        (0..n).filter(|_| rng.gen_bool(0.6)).collect();
                    let retained: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
                    eval("g", &retained, &true_set, n)
                })
                .collect();
            let p = pooled_rates(&evals).unwrap();
            let rhs = p.rho * p.tpr + (1.0 - p.rho) * p.fpr;
            assert!((p.retention - rhs).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn report_groups_sum_to_overall() {
        let evals = vec![
            eval("a", &[0], &[0, 1], 2),
            eval("a", &[0, 1], &[0], 2),
            eval("b", &[], &[0], 1),
        ];
        let report = build_report(&evals, Some(0.1), Some("product".to_string())).unwrap();
        assert_eq!(report.overall.n_docs, 3);
        assert_eq!(report.overall.n_claims, 5);
        let group_docs: usize = report.groups.values().map(|m| m.n_docs).sum();
        let group_claims: usize = report.groups.values().map(|m| m.n_claims).sum();
        assert_eq!(group_docs, report.overall.n_docs);
        assert_eq!(group_claims, report.overall.n_claims);
        let csv = report_csv(&report).unwrap();
        assert!(csv.starts_with("group,coverage"));
        assert_eq!(csv.lines().count(), 4);
    }
}

//! The multiplicative (oracle-form) filtering operator with boundary
//! randomization, plus the claim-wise threshold filter.
//!
//! Claims are sorted by decreasing combined score into a permutation `pi`,
//! and prefix aggregates `G_0 >= G_1 >= ... >= G_N >= G_{N+1}` are computed
//! under the chosen convention (`G_0 = 1` is the empty-prefix identity,
//! `G_{N+1} = 0` the floor). Given a threshold `tau`, the cutoff is
//!
//! ```text
//! K* = max{ k : G_k >= tau }          (max of the empty set = 0)
//! gamma = (G_{K*} - tau) / (G_{K*} - G_{K*+1})
//! ```
//!
//! and the filter retains the first `K*` claims of `pi`, plus the boundary
//! claim `pi(K*+1)` when the document's randomization draw `u` falls below
//! `gamma`. Since `P(u < gamma) = gamma`, the inclusion probability
//! interpolates exactly between the two prefixes, which is what makes the
//! randomized rule hit coverage `tau` exactly instead of conservatively.
//!
//! `gamma` is 0 when the denominator vanishes and is forced to 0 at
//! `K* = N`, where no further claim exists.

use crate::types::{Aggregation, ConformityConvention, Error, Result};

/// Prefix aggregates of a document's combined scores under one convention.
#[derive(Debug, Clone)]
pub struct PrefixAggregate {
    /// `permutation[r]` is the original claim index at rank `r + 1` of the
    /// descending score order (ties broken by ascending claim index).
    pub permutation: Vec<usize>,
    /// `values[k] = G_k` for `k = 0..=N+1`, weakly decreasing, with
    /// `values[0] = 1` and `values[N + 1] = 0`.
    pub values: Vec<f64>,
}

impl PrefixAggregate {
    pub fn n_claims(&self) -> usize {
        self.permutation.len()
    }
}

fn validate_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("combined scores"));
    }
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidThreshold(s));
        }
    }
    Ok(())
}

fn validate_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidThreshold(tau));
    }
    Ok(())
}

fn validate_draw(u: f64) -> Result<()> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::InvalidDraw(u));
    }
    Ok(())
}

/// Descending score order with ties broken by ascending claim index.
fn descending_permutation(scores: &[f64]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..scores.len()).collect();
    perm.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores validated finite")
            .then(a.cmp(&b))
    });
    perm
}

/// Compute the prefix aggregates of `combined_scores` under `convention`.
///
/// Scores are clamped to `[epsilon, 1 - epsilon]` before any log transform.
/// The product variant accumulates `-sum log p` and maps back with `exp`,
/// so long documents never underflow; log-sum keeps the prefix mean (the
/// log is a monotone relabeling that would push thresholds out of score
/// space); power-mean computes `((1/k) sum p^lambda)^(1/lambda)`; worst-case
/// records the k-th largest score itself.
pub fn prefix_aggregate(
    combined_scores: &[f64],
    convention: &ConformityConvention,
) -> Result<PrefixAggregate> {
    validate_scores(combined_scores)?;
    convention.validate()?;
    let eps = convention.epsilon;
    let permutation = descending_permutation(combined_scores);
    let n = combined_scores.len();

    let mut values = Vec::with_capacity(n + 2);
    values.push(1.0);
    match convention.variant {
        Aggregation::Product => {
            let mut neg_log = 0.0;
            for &idx in &permutation {
                let p = combined_scores[idx].clamp(eps, 1.0 - eps);
                neg_log -= p.ln();
                values.push((-neg_log).exp());
            }
        }
        Aggregation::LogSum => {
            let mut sum = 0.0;
            for (k, &idx) in permutation.iter().enumerate() {
                sum += combined_scores[idx].clamp(eps, 1.0 - eps);
                values.push(sum / (k + 1) as f64);
            }
        }
        Aggregation::PowerMean { lambda } => {
            let mut sum = 0.0;
            for (k, &idx) in permutation.iter().enumerate() {
                let p = combined_scores[idx].clamp(eps, 1.0 - eps);
                sum += p.powf(lambda);
                values.push((sum / (k + 1) as f64).powf(1.0 / lambda));
            }
        }
        Aggregation::WorstCase => {
            for &idx in &permutation {
                values.push(combined_scores[idx].clamp(eps, 1.0 - eps));
            }
        }
    }
    values.push(0.0);

    Ok(PrefixAggregate {
        permutation,
        values,
    })
}

/// Cutoff index `K* = max{k : G_k >= tau}` and the boundary randomization
/// probability `gamma`.
pub fn cutoff_and_gamma(agg: &PrefixAggregate, tau: f64) -> Result<(usize, f64)> {
    validate_tau(tau)?;
    let n = agg.n_claims();
    // Values are weakly decreasing, so the qualifying prefix is contiguous.
    let k_star = agg.values[1..=n].iter().take_while(|g| **g >= tau).count();
    if k_star == n {
        // No (N+1)-th claim exists to randomize over.
        return Ok((n, 0.0));
    }
    let g_k = agg.values[k_star];
    let g_next = agg.values[k_star + 1];
    let denom = g_k - g_next;
    let gamma = if denom <= 0.0 {
        0.0
    } else {
        ((g_k - tau) / denom).clamp(0.0, 1.0)
    };
    Ok((k_star, gamma))
}

/// Apply the randomized prefix filter: retain `pi(1..K*)`, plus the boundary
/// claim when `u < gamma`. Returns original claim indices, ascending.
///
/// Under the worst-case convention this degenerates to the claim-wise
/// threshold filter with no randomization.
///
/// `u` must be drawn once per document from Unif[0, 1) by the caller.
pub fn apply_multiplicative_filter(
    combined_scores: &[f64],
    tau: f64,
    u: f64,
    convention: &ConformityConvention,
) -> Result<Vec<usize>> {
    validate_draw(u)?;
    if convention.variant == Aggregation::WorstCase {
        validate_scores(combined_scores)?;
        validate_tau(tau)?;
        return Ok(apply_threshold_filter(combined_scores, tau));
    }
    let agg = prefix_aggregate(combined_scores, convention)?;
    let (k_star, gamma) = cutoff_and_gamma(&agg, tau)?;
    let count = if u < gamma {
        (k_star + 1).min(agg.n_claims())
    } else {
        k_star
    };
    let mut retained = agg.permutation[..count].to_vec();
    retained.sort_unstable();
    Ok(retained)
}

/// Claim-wise threshold filter: `{ j : p_j >= tau }`. Used by the ensemble
/// objective and the worst-case convention.
pub fn apply_threshold_filter(combined_scores: &[f64], tau: f64) -> Vec<usize> {
    combined_scores
        .iter()
        .enumerate()
        .filter(|(_, p)| **p >= tau)
        .map(|(j, _)| j)
        .collect()
}

/// Alternate complement-budget rule, exposed behind an explicit call site
/// and never used by the calibrated pipeline: claims are ordered by
/// ascending score, each costs `-log(1 - p + epsilon)`, and the longest
/// prefix whose total cost stays within `budget` is retained. Selection
/// semantics differ from the default descending-product rule; no
/// equivalence is claimed.
pub fn complement_budget_filter(scores: &[f64], budget: f64, epsilon: f64) -> Result<Vec<usize>> {
    validate_scores(scores)?;
    if budget.is_nan() || budget < 0.0 {
        return Err(Error::InvalidThreshold(budget));
    }
    let mut perm: Vec<usize> = (0..scores.len()).collect();
    perm.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("scores validated finite")
            .then(a.cmp(&b))
    });
    let mut total = 0.0;
    let mut retained = Vec::new();
    for &idx in &perm {
        total += -(1.0 - scores[idx] + epsilon).ln();
        if total > budget {
            break;
        }
        retained.push(idx);
    }
    retained.sort_unstable();
    Ok(retained)
}

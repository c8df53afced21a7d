//! Pareto selection over (interestingness, standardized contribution) and
//! the optional weighted ranking of the result.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contribution::ExplanationCandidate;
use crate::frame::num_cmp;

/// Anything with the two skyline coordinates.
pub trait SkylinePoint {
    fn interestingness(&self) -> f64;
    fn std_contribution(&self) -> f64;
}

impl SkylinePoint for ExplanationCandidate {
    fn interestingness(&self) -> f64 {
        self.interestingness
    }

    fn std_contribution(&self) -> f64 {
        self.contribution.standardized
    }
}

impl SkylinePoint for (f64, f64) {
    fn interestingness(&self) -> f64 {
        self.0
    }

    fn std_contribution(&self) -> f64 {
        self.1
    }
}

/// Positions of the points that no other point beats strictly on both
/// axes, in input order. Runs in O(n log n).
pub fn skyline_indices<P: SkylinePoint>(points: &[P]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| num_cmp(points[b].interestingness(), points[a].interestingness()));
    let mut keep = vec![false; points.len()];
    // best contribution among points with strictly greater interestingness
    let mut best_above = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let level = points[order[i]].interestingness();
        let mut j = i;
        let mut best_here = f64::NEG_INFINITY;
        while j < order.len() && num_cmp(points[order[j]].interestingness(), level) == Ordering::Equal {
            let c = points[order[j]].std_contribution();
            keep[order[j]] = best_above.partial_cmp(&c) != Some(Ordering::Greater);
            best_here = best_here.max(c);
            j += 1;
        }
        best_above = best_above.max(best_here);
        i = j;
    }
    (0..points.len()).filter(|&i| keep[i]).collect()
}

/// The undominated candidates, in input order.
pub fn skyline(candidates: &[ExplanationCandidate]) -> Vec<ExplanationCandidate> {
    skyline_indices(candidates)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("weights must be non-negative with a positive sum")]
    InvalidWeights,
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankWeights {
    pub w_i: f64,
    pub w_c: f64,
}

impl RankWeights {
    pub fn new(w_i: f64, w_c: f64) -> Result<Self, RankError> {
        let ok = w_i >= 0.0 && w_c >= 0.0 && w_i + w_c > 0.0 && (w_i + w_c).is_finite();
        if ok {
            Ok(Self { w_i, w_c })
        } else {
            Err(RankError::InvalidWeights)
        }
    }

    pub fn score(&self, interestingness: f64, std_contribution: f64) -> f64 {
        (self.w_i * interestingness + self.w_c * std_contribution) / (self.w_i + self.w_c)
    }
}

impl Default for RankWeights {
    fn default() -> Self {
        Self { w_i: 1.0, w_c: 1.0 }
    }
}

/// Sorts by weighted score (descending) and keeps the first `k`; ties go to
/// the smaller attribute name, then the smaller bin label.
pub fn rank_top_k(
    candidates: &[ExplanationCandidate],
    weights: RankWeights,
    k: usize,
) -> Result<Vec<ExplanationCandidate>, RankError> {
    if k == 0 {
        return Err(RankError::ZeroK);
    }
    let weights = RankWeights::new(weights.w_i, weights.w_c)?;
    let mut scored: Vec<(f64, &ExplanationCandidate)> = candidates
        .iter()
        .map(|c| (weights.score(c.interestingness, c.contribution.standardized), c))
        .collect();
    scored.sort_by(|a, b| {
        num_cmp(b.0, a.0)
            .then_with(|| a.1.attribute.cmp(&b.1.attribute))
            .then_with(|| a.1.row_set.label.cmp(&b.1.row_set.label))
    });
    Ok(scored.into_iter().take(k).map(|(_, c)| c.clone()).collect())
}

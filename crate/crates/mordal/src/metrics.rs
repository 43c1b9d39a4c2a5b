//! Ranking-fidelity metrics (Kendall τ, weighted τ_w) and speedup accounting.
//!
//! Both τ variants are defined self-containedly over rank positions:
//!
//! * `kendall_tau`: `τ = 2/(M(M−1)) · Σ_{i<j} sgn(T_i − T_j)·sgn(S_i − S_j)`.
//! * `weighted_kendall_tau`: each pair `(i, j)` carries weight
//!   `1/T_i + 1/T_j` with 1-based ranks taken from the first (ground-truth)
//!   argument, and the signed sum is normalized by the total weight. The
//!   weighting makes the measure asymmetric in its arguments.
//!
//! Pairs are enumerated in O(M²); candidate counts here never exceed a few
//! dozen. Ties in rank ordering contribute zero to the numerator but full
//! weight to the denominator.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("rankings must cover the same ids; `{id}` is not in both")]
    IdSetMismatch { id: String },
    #[error("need at least {min} candidates, got {got}")]
    TooFewCandidates { min: usize, got: usize },
    #[error("duplicate id `{id}` in ranking")]
    DuplicateId { id: String },
    #[error("costs must be positive, got {value}")]
    NonPositiveCost { value: f64 },
    #[error("k = {k} exceeds the ranking size {size}")]
    KTooLarge { k: usize, size: usize },
}

/// An ordered list of candidate ids, best first, with optional scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    ids: Vec<String>,
    scores: Option<Vec<f64>>,
}

impl Ranking {
    pub fn new(ids: Vec<String>) -> Result<Self, MetricsError> {
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(MetricsError::DuplicateId { id: id.clone() });
            }
        }
        Ok(Self { ids, scores: None })
    }

    pub fn with_scores(ids: Vec<String>, scores: Vec<f64>) -> Result<Self, MetricsError> {
        assert_eq!(ids.len(), scores.len(), "one score per id");
        let mut r = Self::new(ids)?;
        r.scores = Some(scores);
        Ok(r)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// 1-based rank positions keyed by id.
    fn positions(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i + 1))
            .collect()
    }

    /// Restriction to `keep` (in this ranking's order), re-ranked 1..k.
    fn restrict(&self, keep: &[String]) -> Ranking {
        let ids = self
            .ids
            .iter()
            .filter(|id| keep.contains(id))
            .cloned()
            .collect();
        Ranking { ids, scores: None }
    }
}

fn check_same_ids(t: &Ranking, s: &Ranking) -> Result<(), MetricsError> {
    if t.len() < 2 {
        return Err(MetricsError::TooFewCandidates {
            min: 2,
            got: t.len(),
        });
    }
    let s_pos = s.positions();
    for id in t.ids() {
        if !s_pos.contains_key(id.as_str()) {
            return Err(MetricsError::IdSetMismatch { id: id.clone() });
        }
    }
    if t.len() != s.len() {
        let t_pos = t.positions();
        let missing = s
            .ids()
            .iter()
            .find(|id| !t_pos.contains_key(id.as_str()))
            .expect("size mismatch implies an extra id");
        return Err(MetricsError::IdSetMismatch {
            id: missing.clone(),
        });
    }
    Ok(())
}

/// Plain Kendall rank correlation between two rankings of the same ids.
pub fn kendall_tau(t: &Ranking, s: &Ranking) -> Result<f64, MetricsError> {
    check_same_ids(t, s)?;
    let t_pos = t.positions();
    let s_pos = s.positions();
    let ids = t.ids();
    let m = ids.len();
    let mut sum = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let dt = t_pos[ids[i].as_str()] as f64 - t_pos[ids[j].as_str()] as f64;
            let ds = s_pos[ids[i].as_str()] as f64 - s_pos[ids[j].as_str()] as f64;
            sum += dt.signum() * ds.signum();
        }
    }
    Ok(2.0 * sum / (m as f64 * (m as f64 - 1.0)))
}

/// Hyperbolically weighted Kendall correlation; weights come from the ranks
/// in `t` (the ground truth), so swaps near the top cost more.
pub fn weighted_kendall_tau(t: &Ranking, s: &Ranking) -> Result<f64, MetricsError> {
    check_same_ids(t, s)?;
    let t_pos = t.positions();
    let s_pos = s.positions();
    let ids = t.ids();
    let m = ids.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let ti = t_pos[ids[i].as_str()] as f64;
            let tj = t_pos[ids[j].as_str()] as f64;
            let si = s_pos[ids[i].as_str()] as f64;
            let sj = s_pos[ids[j].as_str()] as f64;
            let weight = 1.0 / ti + 1.0 / tj;
            num += weight * (ti - tj).signum() * (si - sj).signum();
            den += weight;
        }
    }
    Ok(num / den)
}

/// Weighted τ over the ground-truth top-`k` ids only: both rankings are
/// restricted to those ids (preserving relative order) and re-ranked 1..k.
pub fn topk_tau(ground_truth: &Ranking, other: &Ranking, k: usize) -> Result<f64, MetricsError> {
    check_same_ids(ground_truth, other)?;
    if k > ground_truth.len() {
        return Err(MetricsError::KTooLarge {
            k,
            size: ground_truth.len(),
        });
    }
    let keep: Vec<String> = ground_truth.ids()[..k].to_vec();
    weighted_kendall_tau(&ground_truth.restrict(&keep), &other.restrict(&keep))
}

/// `grid_cost / mordal_cost`; both must be positive.
pub fn speedup(mordal_cost: f64, grid_cost: f64) -> Result<f64, MetricsError> {
    for value in [mordal_cost, grid_cost] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(MetricsError::NonPositiveCost { value });
        }
    }
    Ok(grid_cost / mordal_cost)
}

//! Per-phase cost accounting and trained-ratio high-water marks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::Candidate;
use crate::oracle::EvalRecord;

/// Pipeline phase a charge is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Clustering,
    InterEs,
    IntraEs,
    Prediction,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::Clustering,
        Phase::InterEs,
        Phase::IntraEs,
        Phase::Prediction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Clustering => "clustering",
            Phase::InterEs => "inter_es",
            Phase::IntraEs => "intra_es",
            Phase::Prediction => "prediction",
        }
    }

    fn index(self) -> usize {
        match self {
            Phase::Clustering => 0,
            Phase::InterEs => 1,
            Phase::IntraEs => 2,
            Phase::Prediction => 3,
        }
    }
}

/// Accumulated cost per phase plus per-candidate trained-ratio marks.
///
/// Every charge is attributed to exactly one phase, so the total is always
/// the sum of the phase costs.
#[derive(Debug, Clone, Default)]
pub struct CostLedger {
    phase_costs: [f64; 4],
    trained: BTreeMap<Candidate, f64>,
}

/// Serializable snapshot of the ledger.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CostBreakdown {
    pub clustering: f64,
    pub inter_es: f64,
    pub intra_es: f64,
    pub prediction: f64,
    pub total: f64,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Books one evaluation record against a phase, updating the candidate's
    /// trained-ratio mark.
    pub fn charge(&mut self, phase: Phase, record: &EvalRecord) {
        self.phase_costs[phase.index()] += record.cost;
        let mark = self.trained.entry(record.candidate.clone()).or_insert(0.0);
        if record.ratio > *mark {
            *mark = record.ratio;
        }
    }

    /// Books a cost not tied to a candidate evaluation (e.g. CKA work).
    pub fn charge_flat(&mut self, phase: Phase, amount: f64) {
        self.phase_costs[phase.index()] += amount;
    }

    pub fn phase_cost(&self, phase: Phase) -> f64 {
        self.phase_costs[phase.index()]
    }

    pub fn total(&self) -> f64 {
        self.phase_costs.iter().sum()
    }

    /// Highest ratio the candidate has been trained to, 0.0 if never seen.
    pub fn trained_ratio(&self, candidate: &Candidate) -> f64 {
        self.trained.get(candidate).copied().unwrap_or(0.0)
    }

    pub fn trained_ratios(&self) -> &BTreeMap<Candidate, f64> {
        &self.trained
    }

    pub fn breakdown(&self) -> CostBreakdown {
        CostBreakdown {
            clustering: self.phase_cost(Phase::Clustering),
            inter_es: self.phase_cost(Phase::InterEs),
            intra_es: self.phase_cost(Phase::IntraEs),
            prediction: self.phase_cost(Phase::Prediction),
            total: self.total(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(c: &Candidate, ratio: f64, cost: f64) -> EvalRecord {
        EvalRecord {
            candidate: c.clone(),
            ratio,
            error: 0.5,
            cost,
        }
    }

    #[test]
    fn total_is_sum_of_phases() {
        let c = Candidate::new("v", "l");
        let mut ledger = CostLedger::new();
        ledger.charge(Phase::InterEs, &record(&c, 0.03, 0.04));
        ledger.charge(Phase::IntraEs, &record(&c, 0.06, 0.04));
        ledger.charge_flat(Phase::Clustering, 0.5);
        ledger.charge(Phase::Prediction, &record(&c, 0.125, 0.075));
        let b = ledger.breakdown();
        assert_eq!(b.total, b.clustering + b.inter_es + b.intra_es + b.prediction);
        assert_eq!(ledger.trained_ratio(&c), 0.125);
    }

    #[test]
    fn marks_never_decrease() {
        let c = Candidate::new("v", "l");
        let mut ledger = CostLedger::new();
        ledger.charge(Phase::InterEs, &record(&c, 0.125, 0.135));
        ledger.charge(Phase::Prediction, &record(&c, 0.03, 0.01));
        assert_eq!(ledger.trained_ratio(&c), 0.125);
    }

    #[test]
    fn phase_names_are_stable() {
        assert_eq!(
            Phase::ALL.map(|p| p.name()),
            ["clustering", "inter_es", "intra_es", "prediction"]
        );
        assert_eq!(serde_json::to_string(&Phase::InterEs).unwrap(), "\"inter_es\"");
    }
}

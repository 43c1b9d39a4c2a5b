//! Pluggable evaluation oracles.
//!
//! An [`Oracle`] answers "train candidate `c` on a fraction `r` of the
//! alignment data and report the task error". Three backends exist:
//!
//! * [`TraceOracle`] replays a recorded trace bundle and refuses ratios that
//!   are not on the recorded grid.
//! * [`SyntheticOracle`] evaluates seeded synthetic learning curves at any
//!   ratio.
//! * [`ExternalOracle`] drives a trainer subprocess over a JSON-lines
//!   protocol; the trainer owns its own cost accounting.
//!
//! Trace and synthetic oracles charge incremental training cost with
//! checkpoint reuse: training to `max(r, previous)` costs
//! `(new_max − old_max) · full_train_cost`, and any query at or below the
//! trained mark costs only `eval_cost`.

mod external;
mod synthetic;
mod trace;

pub use external::ExternalOracle;
pub use synthetic::{
    default_ratio_grid, generate_synthetic, CurveFamily, GroupAssignment, SyntheticCurveParams,
    SyntheticOracle, SyntheticSpec,
};
pub use trace::{GeneratorInfo, GroundTruth, TraceBundle, TraceError, TraceManifest, TraceOracle};

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::Candidate;

/// Errors are floored here so `log(error)` is always defined.
pub const ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("ratio {ratio} outside (0, 1]")]
    RatioOutOfRange { ratio: f64 },
    #[error("candidate `{candidate}` is not in the model zoo")]
    UnknownCandidate { candidate: String },
    #[error("ratio {ratio} for `{candidate}` is not on the trace grid")]
    UnsupportedRatio { candidate: String, ratio: f64 },
    #[error("oracle protocol violation: {reason}; payload: {payload}")]
    Protocol { reason: String, payload: String },
    #[error("oracle subprocess I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("oracle timed out after {seconds:.1}s")]
    Timeout { seconds: f64 },
    #[error("invalid synthetic curve spec: {reason}")]
    InvalidSpec { reason: String },
}

/// The two model-id lists whose Cartesian product is the candidate space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zoo {
    ve_ids: Vec<String>,
    llm_ids: Vec<String>,
}

impl Zoo {
    pub fn new(ve_ids: Vec<String>, llm_ids: Vec<String>) -> Result<Self, OracleError> {
        for (label, ids) in [("ve", &ve_ids), ("llm", &llm_ids)] {
            if ids.is_empty() {
                return Err(OracleError::InvalidSpec {
                    reason: format!("empty {label} id list"),
                });
            }
            for (i, id) in ids.iter().enumerate() {
                if ids[..i].contains(id) {
                    return Err(OracleError::InvalidSpec {
                        reason: format!("duplicate {label} id `{id}`"),
                    });
                }
            }
        }
        Ok(Self { ve_ids, llm_ids })
    }

    pub fn ve_ids(&self) -> &[String] {
        &self.ve_ids
    }

    pub fn llm_ids(&self) -> &[String] {
        &self.llm_ids
    }

    pub fn contains(&self, candidate: &Candidate) -> bool {
        self.ve_ids.contains(&candidate.ve) && self.llm_ids.contains(&candidate.llm)
    }

    /// All candidates, VE-major then LLM, in zoo order.
    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::with_capacity(self.ve_ids.len() * self.llm_ids.len());
        for ve in &self.ve_ids {
            for llm in &self.llm_ids {
                out.push(Candidate::new(ve.clone(), llm.clone()));
            }
        }
        out
    }

    pub fn candidate_count(&self) -> usize {
        self.ve_ids.len() * self.llm_ids.len()
    }
}

/// Abstract cost units: 1.0 is one candidate's full-data alignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    #[serde(default = "CostModel::default_full_train_cost")]
    pub full_train_cost: f64,
    #[serde(default = "CostModel::default_eval_cost")]
    pub eval_cost: f64,
}

impl CostModel {
    fn default_full_train_cost() -> f64 {
        1.0
    }

    fn default_eval_cost() -> f64 {
        0.01
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.full_train_cost <= 0.0 || self.eval_cost <= 0.0 {
            return Err(OracleError::InvalidSpec {
                reason: "cost model entries must be positive".into(),
            });
        }
        Ok(())
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            full_train_cost: Self::default_full_train_cost(),
            eval_cost: Self::default_eval_cost(),
        }
    }
}

/// One oracle observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub candidate: Candidate,
    pub ratio: f64,
    pub error: f64,
    pub cost: f64,
}

/// The evaluation backend contract.
///
/// `query` must be pure in its observable error: identical `(candidate,
/// ratio)` queries return identical errors. Costs may differ between calls
/// because of checkpoint reuse.
pub trait Oracle: Send + Sync {
    fn zoo(&self) -> &Zoo;

    fn query(&self, candidate: &Candidate, ratio: f64) -> Result<EvalRecord, OracleError>;
}

pub(crate) fn validate_query(zoo: &Zoo, candidate: &Candidate, ratio: f64) -> Result<(), OracleError> {
    if !(ratio > 0.0 && ratio <= 1.0) || !ratio.is_finite() {
        return Err(OracleError::RatioOutOfRange { ratio });
    }
    if !zoo.contains(candidate) {
        return Err(OracleError::UnknownCandidate {
            candidate: candidate.to_string(),
        });
    }
    Ok(())
}

/// Checkpoint-reuse accounting shared by trace and synthetic oracles.
///
/// For any query sequence over one candidate, the total training cost charged
/// equals `(max ratio ever queried) · full_train_cost`, independent of order;
/// each query additionally costs one `eval_cost`.
#[derive(Debug, Default)]
pub(crate) struct CheckpointAccountant {
    marks: Mutex<HashMap<Candidate, f64>>,
}

impl CheckpointAccountant {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the incremental cost of evaluating `candidate` at `ratio`.
    pub fn charge(&self, cost_model: &CostModel, candidate: &Candidate, ratio: f64) -> f64 {
        let mut marks = self.marks.lock().expect("accountant poisoned");
        let mark = marks.entry(candidate.clone()).or_insert(0.0);
        let training = if ratio > *mark {
            let inc = (ratio - *mark) * cost_model.full_train_cost;
            *mark = ratio;
            inc
        } else {
            0.0
        };
        training + cost_model.eval_cost
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accountant_charges_incrementally() {
        let acct = CheckpointAccountant::new();
        let cm = CostModel::default();
        let c = Candidate::new("v", "l");
        let first = acct.charge(&cm, &c, 0.125);
        assert!((first - (0.125 + 0.01)).abs() < 1e-12);
        let second = acct.charge(&cm, &c, 0.0625);
        assert!((second - 0.01).abs() < 1e-12);
        let third = acct.charge(&cm, &c, 0.25);
        assert!((third - (0.125 + 0.01)).abs() < 1e-12);
    }

    #[test]
    fn accountant_total_is_order_independent() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let cm = CostModel::default();
        let c = Candidate::new("v", "l");
        let ratios = [0.03, 0.06, 0.12, 0.125, 0.0625, 0.5];
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        for _ in 0..20 {
            let mut seq = ratios.to_vec();
            seq.shuffle(&mut rng);
            let acct = CheckpointAccountant::new();
            let total: f64 = seq.iter().map(|&r| acct.charge(&cm, &c, r)).sum();
            let expected = 0.5 * cm.full_train_cost + seq.len() as f64 * cm.eval_cost;
            assert!((total - expected).abs() < 1e-12, "sequence {seq:?}");
        }
    }

    #[test]
    fn zoo_rejects_duplicates_and_empties() {
        assert!(Zoo::new(vec![], vec!["l".into()]).is_err());
        assert!(Zoo::new(vec!["v".into(), "v".into()], vec!["l".into()]).is_err());
        let zoo = Zoo::new(vec!["v0".into(), "v1".into()], vec!["l0".into()]).unwrap();
        assert_eq!(zoo.candidate_count(), 2);
        assert!(zoo.contains(&Candidate::new("v1", "l0")));
        assert!(!zoo.contains(&Candidate::new("v2", "l0")));
    }

    #[test]
    fn validate_query_bounds() {
        let zoo = Zoo::new(vec!["v".into()], vec!["l".into()]).unwrap();
        let c = Candidate::new("v", "l");
        assert!(validate_query(&zoo, &c, 0.0).is_err());
        assert!(validate_query(&zoo, &c, 1.5).is_err());
        assert!(validate_query(&zoo, &c, 1.0).is_ok());
        assert!(validate_query(&zoo, &Candidate::new("x", "l"), 0.5).is_err());
    }
}

//! Search report: ranking, elimination order, cost breakdown, and metrics.
//!
//! Reports are JSON-first (see `docs/report.schema.json`); human rendering is
//! the CLI's job. Field order and map orderings are fixed so identical runs
//! serialize byte-identically.

use serde::{Deserialize, Serialize};

use crate::clustering::Candidate;
use crate::ledger::{CostBreakdown, Phase};
use crate::search::SearchConfig;

pub const REPORT_SCHEMA: &str = "mordal-report/1";

/// One candidate eliminated at a rung; members of a cluster eliminated in the
/// inter phase carry their representative's observed error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elimination {
    pub candidate: Candidate,
    pub phase: Phase,
    pub rung: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top1 {
    pub candidate: Candidate,
    pub predicted_full_error: f64,
    pub converged: bool,
    /// Ground-truth full-data error when the trace records ratio 1.0.
    pub true_full_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortlistEntry {
    pub candidate: Candidate,
    pub predicted_full_error: f64,
    pub slope: f64,
    pub intercept: f64,
    pub fit_mse: f64,
    pub converged: bool,
}

/// Ranking fidelity and efficiency versus grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub tau: f64,
    pub tau_w: f64,
    pub top10_tau_w: f64,
    pub grid_cost: f64,
    pub mordal_cost: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooEcho {
    pub ve_ids: Vec<String>,
    pub llm_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub schema: String,
    pub incomplete: bool,
    /// The phase failure that truncated the run, when incomplete.
    pub error: Option<String>,
    pub seed: u64,
    pub config: SearchConfig,
    pub zoo: ZooEcho,
    pub n_clusters: usize,
    pub top1: Option<Top1>,
    pub shortlist: Vec<ShortlistEntry>,
    /// All candidates, best first: shortlist by predicted error, then the
    /// eliminated in reverse elimination order.
    pub ranking: Vec<Candidate>,
    /// Chronological elimination record.
    pub elimination_log: Vec<Elimination>,
    pub costs: CostBreakdown,
    /// Trained-ratio high-water mark per candidate key (`ve__llm`).
    pub trained_ratios: Vec<(String, f64)>,
    pub metrics: Option<ReportMetrics>,
}

impl SearchReport {
    pub fn to_json_pretty(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self).map(|s| s + "\n")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

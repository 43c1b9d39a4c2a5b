//! Mordal searches for the best (vision-encoder, language-model) pairing for a
//! target task without training every combination.
//!
//! The pipeline has four phases:
//!
//! 1. **Candidate clustering** — candidates are grouped by representation
//!    similarity (linear CKA over activation matrices), first clustering the
//!    vision encoders and then, per vision-encoder cluster, the language
//!    models conditioned on that cluster's medoid.
//! 2. **Inter-cluster early stopping** — successive halving over one
//!    representative candidate per cluster prunes poorly performing clusters.
//! 3. **Intra-cluster early stopping** — successive halving over all members
//!    of the surviving clusters produces a small shortlist.
//! 4. **Scaling prediction** — each shortlisted candidate is evaluated at
//!    geometrically shrinking data ratios, a log-log line is fitted, and the
//!    full-data error is extrapolated from the intercept.
//!
//! Evaluations are served by a pluggable [`oracle::Oracle`]: trace replay
//! ([`oracle::TraceOracle`]), synthetic learning curves
//! ([`oracle::SyntheticOracle`]), or an external trainer subprocess
//! ([`oracle::ExternalOracle`]). Costs are expressed in abstract units where
//! 1.0 is one candidate's full-data alignment; checkpoint reuse means training
//! a candidate to ratio `r` after ratio `r' < r` only charges the increment.

pub mod clustering;
pub mod config;
pub mod ledger;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod scaling;
pub mod search;
pub mod similarity;

pub use clustering::{Candidate, CandidateCluster, ClusterSet, DistanceMatrix};
pub use config::JobConfig;
pub use ledger::{CostLedger, Phase};
pub use oracle::{CostModel, EvalRecord, Oracle, Zoo};
pub use report::SearchReport;
pub use scaling::ScalingConfig;
pub use search::{RunOptions, SearchConfig, ShaConfig};
pub use similarity::ActivationMatrix;

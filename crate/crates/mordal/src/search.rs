//! Pipeline orchestration: candidate clustering, inter-cluster successive
//! halving over representatives, intra-cluster successive halving over the
//! surviving clusters' members, and the handoff to scaling prediction.
//!
//! Successive halving runs the capped geometric budget ladder
//! `min(b·η^k, R)` to completion. At each rung every live arm is trained to
//! the rung budget (incremental cost through the shared ledger), arms are ranked
//! by observed error, and while more than `keep_k` arms remain the bottom
//! `live − max(⌈live/η⌉, keep_k)` are eliminated. Survivors therefore finish
//! trained at `R`, and later phases reuse those checkpoints.
//!
//! Within a rung oracle queries may run on several threads (capped by the
//! parallelism option); ranking happens only after all results arrive and
//! sorts by (error, id), so results never depend on completion order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{
    candidate_clusters_from_distances, Candidate, CandidateCluster, ClusterError,
};
use crate::ledger::{CostLedger, Phase};
use crate::metrics::Ranking;
use crate::oracle::{CostModel, EvalRecord, Oracle, OracleError, TraceBundle, TraceError, Zoo};
use crate::report::{Elimination, SearchReport, ShortlistEntry, Top1, ZooEcho, REPORT_SCHEMA};
use crate::scaling::{scaling_prediction, select_best, ScalingConfig, ScalingError, ScalingFit};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("oracle failed for `{candidate}` at ratio {ratio}: {source}")]
    Oracle {
        candidate: String,
        ratio: f64,
        #[source]
        source: OracleError,
    },
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error("invalid search config: {reason}")]
    InvalidConfig { reason: String },
    #[error("no scaling fit succeeded for the shortlist")]
    EmptyShortlistFits,
}

/// Successive-halving knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShaConfig {
    /// Maximum data sample ratio `R`.
    pub max_ratio: f64,
    /// Initial per-arm budget `b`.
    pub initial_budget: f64,
    /// Reduction factor `η`.
    pub eta: f64,
    /// Never eliminate below this many arms.
    pub keep_k: usize,
}

impl Default for ShaConfig {
    fn default() -> Self {
        Self {
            max_ratio: 0.125,
            initial_budget: 0.03,
            eta: 2.0,
            keep_k: 1,
        }
    }
}

impl ShaConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |reason: String| Err(SearchError::InvalidConfig { reason });
        if !(self.max_ratio > 0.0 && self.max_ratio <= 1.0) {
            return bad(format!("max_ratio {} outside (0, 1]", self.max_ratio));
        }
        if !(self.initial_budget > 0.0 && self.initial_budget <= self.max_ratio) {
            return bad(format!(
                "initial_budget {} outside (0, max_ratio]",
                self.initial_budget
            ));
        }
        if !(self.eta > 1.0) || !self.eta.is_finite() {
            return bad(format!("eta {} must exceed 1", self.eta));
        }
        if self.keep_k == 0 {
            return bad("keep_k must be positive".into());
        }
        Ok(())
    }

    /// The capped geometric budget ladder `min(b·η^k, R)`, ending at `R`.
    pub fn rung_budgets(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut budget = self.initial_budget.min(self.max_ratio);
        loop {
            out.push(budget);
            if budget >= self.max_ratio {
                break;
            }
            budget = (budget * self.eta).min(self.max_ratio);
        }
        out
    }
}

/// Full search configuration (echoed into reports).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub t_ve: f64,
    pub t_llm: f64,
    pub topk_inter: usize,
    pub topk_intra: usize,
    pub sha: ShaConfig,
    pub scaling: ScalingConfig,
    /// Cost booked to the clustering phase per CKA evaluation.
    #[serde(default)]
    pub cka_eval_cost: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            t_ve: 0.7,
            t_llm: 0.8,
            topk_inter: 3,
            topk_intra: 3,
            sha: ShaConfig::default(),
            scaling: ScalingConfig::default(),
            cka_eval_cost: 0.0,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |reason: String| Err(SearchError::InvalidConfig { reason });
        for (name, t) in [("t_ve", self.t_ve), ("t_llm", self.t_llm)] {
            if !(0.0..=1.0).contains(&t) || !t.is_finite() {
                return bad(format!("{name} = {t} outside [0, 1]"));
            }
        }
        if self.topk_inter == 0 || self.topk_intra == 0 {
            return bad("topk_inter and topk_intra must be positive".into());
        }
        if self.cka_eval_cost < 0.0 {
            return bad("cka_eval_cost must be non-negative".into());
        }
        self.sha.validate()?;
        self.scaling
            .validate()
            .map_err(|e| SearchError::InvalidConfig {
                reason: e.to_string(),
            })?;
        // A single checkpoint high-water chain requires one R.
        if self.sha.max_ratio != self.scaling.max_ratio {
            return bad(format!(
                "early-stopping R {} and scaling R {} must agree",
                self.sha.max_ratio, self.scaling.max_ratio
            ));
        }
        Ok(())
    }

    /// Every ratio a run with this config may request (ladder, scaling
    /// ratios, and the full-data point for grid comparison).
    pub fn required_ratios(&self) -> Vec<f64> {
        let mut out = self.sha.rung_budgets();
        let floor = self.scaling.effective_min_ratio();
        let mut r = self.scaling.max_ratio;
        loop {
            out.push(r);
            let next = r / self.scaling.shrink;
            if next < floor * (1.0 - 1e-12) {
                break;
            }
            r = next;
        }
        out.push(1.0);
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }
}

/// Execution options that must never affect results, only wall time.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Maximum concurrent oracle queries within a rung.
    pub parallelism: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Outcome of one successive-halving run.
#[derive(Debug, Clone)]
pub struct ShaOutcome {
    /// Survivors ranked by final observed error (ties by id).
    pub survivors: Vec<Candidate>,
    /// Live count after each rung.
    pub rung_counts: Vec<usize>,
    /// Budgets actually run.
    pub budgets: Vec<f64>,
}

/// A run that failed mid-phase still yields the partial report.
#[derive(Debug)]
pub struct SearchFailure {
    pub partial: SearchReport,
    pub error: SearchError,
}

/// Queries `(candidate, ratio)` pairs, possibly concurrently, returning
/// records in input order. The first failing pair (by input order) aborts.
fn query_many(
    oracle: &dyn Oracle,
    items: &[(Candidate, f64)],
    parallelism: usize,
) -> Result<Vec<EvalRecord>, SearchError> {
    let wrap = |c: &Candidate, r: f64, source: OracleError| SearchError::Oracle {
        candidate: c.to_string(),
        ratio: r,
        source,
    };
    let workers = parallelism.max(1).min(items.len());
    let mut slots: Vec<Option<Result<EvalRecord, OracleError>>> = Vec::new();
    if workers <= 1 {
        for (c, r) in items {
            slots.push(Some(oracle.query(c, *r)));
        }
    } else {
        slots.resize_with(items.len(), || None);
        let shared = Mutex::new(&mut slots);
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let (c, r) = &items[i];
                    let result = oracle.query(c, *r);
                    shared.lock().expect("slots poisoned")[i] = Some(result);
                });
            }
        });
    }
    let mut out = Vec::with_capacity(items.len());
    for (slot, (c, r)) in slots.into_iter().zip(items) {
        match slot.expect("every slot filled") {
            Ok(rec) => out.push(rec),
            Err(e) => return Err(wrap(c, *r, e)),
        }
    }
    Ok(out)
}

/// Successive halving over `arms`.
///
/// Runs the budget ladder to `R`; while more than `keep_k` arms are live, each
/// rung keeps the top `max(⌈live/η⌉, keep_k)` by observed error (ties by id).
/// Eliminations are appended to `log` as they happen, so an aborted rung
/// preserves the history.
pub fn sha(
    arms: &[Candidate],
    oracle: &dyn Oracle,
    cfg: &ShaConfig,
    phase: Phase,
    ledger: &mut CostLedger,
    log: &mut Vec<Elimination>,
    parallelism: usize,
) -> Result<ShaOutcome, SearchError> {
    cfg.validate()?;
    if arms.is_empty() {
        return Err(SearchError::InvalidConfig {
            reason: "sha needs at least one arm".into(),
        });
    }
    let budgets = cfg.rung_budgets();
    let mut live: Vec<Candidate> = arms.to_vec();
    let mut rung_counts = Vec::with_capacity(budgets.len());

    for (rung, &budget) in budgets.iter().enumerate() {
        let items: Vec<(Candidate, f64)> =
            live.iter().map(|c| (c.clone(), budget)).collect();
        let records = query_many(oracle, &items, parallelism)?;
        let mut ranked: Vec<(f64, Candidate)> = Vec::with_capacity(records.len());
        for rec in &records {
            ledger.charge(phase, rec);
            ranked.push((rec.error, rec.candidate.clone()));
        }
        ranked.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite errors")
                .then_with(|| a.1.cmp(&b.1))
        });
        let keep = if live.len() > cfg.keep_k {
            let fraction = (live.len() as f64 / cfg.eta).ceil() as usize;
            fraction.max(cfg.keep_k).min(live.len())
        } else {
            live.len()
        };
        for (error, candidate) in ranked.drain(keep..) {
            log.push(Elimination {
                candidate,
                phase,
                rung,
                error,
            });
        }
        live = ranked.into_iter().map(|(_, c)| c).collect();
        rung_counts.push(live.len());
    }

    Ok(ShaOutcome {
        survivors: live,
        rung_counts,
        budgets,
    })
}

/// Inter-cluster early stopping over one representative per cluster; a
/// cluster survives iff its representative survives. Every member of an
/// eliminated cluster is logged at the representative's rung and error.
pub fn run_inter_cluster(
    clusters: &[CandidateCluster],
    oracle: &dyn Oracle,
    cfg: &SearchConfig,
    ledger: &mut CostLedger,
    log: &mut Vec<Elimination>,
    parallelism: usize,
) -> Result<Vec<CandidateCluster>, SearchError> {
    let reps: Vec<Candidate> = clusters.iter().map(|c| c.representative.clone()).collect();
    let sha_cfg = ShaConfig {
        keep_k: cfg.topk_inter.min(clusters.len()).max(1),
        ..cfg.sha.clone()
    };
    let mut rep_log = Vec::new();
    let outcome = sha(
        &reps,
        oracle,
        &sha_cfg,
        Phase::InterEs,
        ledger,
        &mut rep_log,
        parallelism,
    );
    // Expand representative eliminations to whole clusters, even on abort.
    for event in rep_log {
        let cluster = clusters
            .iter()
            .find(|c| c.representative == event.candidate)
            .expect("representative belongs to a cluster");
        let mut members = cluster.members.clone();
        members.sort();
        for candidate in members {
            log.push(Elimination {
                candidate,
                phase: event.phase,
                rung: event.rung,
                error: event.error,
            });
        }
    }
    let outcome = outcome?;
    let survivors = outcome
        .survivors
        .iter()
        .map(|rep| {
            clusters
                .iter()
                .find(|c| &c.representative == rep)
                .expect("survivor is a representative")
                .clone()
        })
        .collect();
    Ok(survivors)
}

/// Intra-cluster early stopping over the pooled members of the surviving
/// clusters; representatives keep their checkpoints through the shared
/// ledger. Returns the shortlist for scaling prediction.
pub fn run_intra_cluster(
    survivor_clusters: &[CandidateCluster],
    oracle: &dyn Oracle,
    cfg: &SearchConfig,
    ledger: &mut CostLedger,
    log: &mut Vec<Elimination>,
    parallelism: usize,
) -> Result<Vec<Candidate>, SearchError> {
    if survivor_clusters.is_empty() {
        return Err(SearchError::InvalidConfig {
            reason: "no surviving clusters to evaluate".into(),
        });
    }
    let pool: Vec<Candidate> = survivor_clusters
        .iter()
        .flat_map(|c| c.members.iter().cloned())
        .collect();
    let sha_cfg = ShaConfig {
        keep_k: cfg.topk_intra,
        ..cfg.sha.clone()
    };
    let outcome = sha(
        &pool,
        oracle,
        &sha_cfg,
        Phase::IntraEs,
        ledger,
        log,
        parallelism,
    )?;
    Ok(outcome.survivors)
}

/// Full-data grid search baseline: every candidate at ratio 1.0, ranked by
/// error. Training from scratch has no checkpoints to reuse, so the cost is
/// `|candidates| · (full_train_cost + eval_cost)` by definition.
pub struct GridOutcome {
    pub ranking: Ranking,
    pub cost: f64,
}

pub fn run_grid(
    zoo: &Zoo,
    oracle: &dyn Oracle,
    cost_model: &CostModel,
) -> Result<GridOutcome, SearchError> {
    let mut scored: Vec<(f64, Candidate)> = Vec::with_capacity(zoo.candidate_count());
    for candidate in zoo.candidates() {
        let rec = oracle
            .query(&candidate, 1.0)
            .map_err(|source| SearchError::Oracle {
                candidate: candidate.to_string(),
                ratio: 1.0,
                source,
            })?;
        scored.push((rec.error, candidate));
    }
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite errors")
            .then_with(|| a.1.cmp(&b.1))
    });
    let cost = zoo.candidate_count() as f64 * (cost_model.full_train_cost + cost_model.eval_cost);
    let (scores, ids): (Vec<f64>, Vec<String>) =
        scored.into_iter().map(|(e, c)| (e, c.key())).unzip();
    let ranking = Ranking::with_scores(ids, scores).expect("zoo candidates are unique");
    Ok(GridOutcome { ranking, cost })
}

/// Executes the full pipeline against a trace bundle and an oracle.
///
/// Phase failures abort but return the partial report marked incomplete.
pub fn run(
    bundle: &TraceBundle,
    oracle: &dyn Oracle,
    cfg: &SearchConfig,
    options: &RunOptions,
) -> Result<SearchReport, Box<SearchFailure>> {
    let mut state = RunState::new(bundle.zoo(), cfg);
    match run_phases(bundle, oracle, cfg, options, &mut state) {
        Ok(report) => Ok(report),
        Err(error) => Err(Box::new(SearchFailure {
            partial: state.partial_report(&error),
            error,
        })),
    }
}

struct RunState {
    zoo_echo: ZooEcho,
    config: SearchConfig,
    ledger: CostLedger,
    log: Vec<Elimination>,
    n_clusters: usize,
}

impl RunState {
    fn new(zoo: &Zoo, cfg: &SearchConfig) -> Self {
        Self {
            zoo_echo: ZooEcho {
                ve_ids: zoo.ve_ids().to_vec(),
                llm_ids: zoo.llm_ids().to_vec(),
            },
            config: cfg.clone(),
            ledger: CostLedger::new(),
            log: Vec::new(),
            n_clusters: 0,
        }
    }

    fn base_report(&self) -> SearchReport {
        SearchReport {
            schema: REPORT_SCHEMA.to_string(),
            incomplete: false,
            error: None,
            seed: self.config.seed,
            config: self.config.clone(),
            zoo: self.zoo_echo.clone(),
            n_clusters: self.n_clusters,
            top1: None,
            shortlist: Vec::new(),
            ranking: Vec::new(),
            elimination_log: self.log.clone(),
            costs: self.ledger.breakdown(),
            trained_ratios: self
                .ledger
                .trained_ratios()
                .iter()
                .map(|(c, r)| (c.key(), *r))
                .collect(),
            metrics: None,
        }
    }

    fn partial_report(&self, error: &SearchError) -> SearchReport {
        let mut report = self.base_report();
        report.incomplete = true;
        report.error = Some(error.to_string());
        report
    }
}

fn run_phases(
    bundle: &TraceBundle,
    oracle: &dyn Oracle,
    cfg: &SearchConfig,
    options: &RunOptions,
    state: &mut RunState,
) -> Result<SearchReport, SearchError> {
    cfg.validate()?;
    let parallelism = options.parallelism.max(1);

    // Phase 1: candidate clustering.
    let (ve_dist, ve_evals) = bundle.ve_distances()?;
    let mut llm_evals = 0usize;
    let clusters = candidate_clusters_from_distances(
        &ve_dist,
        |medoid| {
            let (dist, evals) = bundle
                .llm_distances(medoid)
                .map_err(|e| ClusterError::ActivationSource {
                    ve_medoid: medoid.to_string(),
                    reason: e.to_string(),
                })?;
            llm_evals += evals;
            Ok(dist)
        },
        cfg.t_ve,
        cfg.t_llm,
    )?;
    state.n_clusters = clusters.len();
    state.ledger.charge_flat(
        Phase::Clustering,
        (ve_evals + llm_evals) as f64 * cfg.cka_eval_cost,
    );
    debug_assert_eq!(
        clusters.iter().map(|c| c.members.len()).sum::<usize>(),
        bundle.zoo().candidate_count(),
        "candidate clusters must partition the zoo product"
    );

    // Phase 2: inter-cluster early stopping over representatives.
    let survivors = run_inter_cluster(
        &clusters,
        oracle,
        cfg,
        &mut state.ledger,
        &mut state.log,
        parallelism,
    )?;

    // Phase 3: intra-cluster early stopping over pooled members.
    let shortlist = run_intra_cluster(
        &survivors,
        oracle,
        cfg,
        &mut state.ledger,
        &mut state.log,
        parallelism,
    )?;

    // Phase 4: scaling prediction on the shortlist.
    let results = scaling_prediction(&shortlist, oracle, &cfg.scaling, &mut state.ledger);
    let mut fits: Vec<ScalingFit> = Vec::new();
    let mut failed: Vec<Candidate> = Vec::new();
    let mut first_error: Option<ScalingError> = None;
    for (candidate, result) in results {
        match result {
            Ok(fit) => fits.push(fit),
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
                failed.push(candidate);
            }
        }
    }
    if fits.is_empty() {
        return Err(first_error.map_or(SearchError::EmptyShortlistFits, SearchError::Scaling));
    }

    // Survivors ranked by (converged, predicted error, id); fit failures
    // trail by id; eliminated candidates follow in reverse elimination order.
    fits.sort_by(|a, b| {
        b.converged
            .cmp(&a.converged)
            .then(
                a.predicted_full_error
                    .partial_cmp(&b.predicted_full_error)
                    .expect("finite predictions"),
            )
            .then_with(|| a.candidate.cmp(&b.candidate))
    });
    failed.sort();

    let mut ranking: Vec<Candidate> = fits.iter().map(|f| f.candidate.clone()).collect();
    ranking.extend(failed);
    let mut eliminated = state.log.clone();
    eliminated.sort_by(|a, b| {
        phase_order(b.phase)
            .cmp(&phase_order(a.phase))
            .then(b.rung.cmp(&a.rung))
            .then(a.error.partial_cmp(&b.error).expect("finite errors"))
            .then_with(|| a.candidate.cmp(&b.candidate))
    });
    ranking.extend(eliminated.into_iter().map(|e| e.candidate));
    debug_assert_eq!(ranking.len(), bundle.zoo().candidate_count());

    let best = select_best(&fits).expect("fits checked non-empty");
    let top1 = Top1 {
        candidate: best.candidate.clone(),
        predicted_full_error: best.predicted_full_error,
        converged: best.converged,
        true_full_error: bundle.curve_error(&best.candidate, 1.0),
    };
    let shortlist_entries = fits
        .iter()
        .map(|f| ShortlistEntry {
            candidate: f.candidate.clone(),
            predicted_full_error: f.predicted_full_error,
            slope: f.slope,
            intercept: f.intercept,
            fit_mse: f.fit_mse,
            converged: f.converged,
        })
        .collect();

    let mut report = state.base_report();
    report.top1 = Some(top1);
    report.shortlist = shortlist_entries;
    report.ranking = ranking;
    Ok(report)
}

fn phase_order(phase: Phase) -> u8 {
    match phase {
        Phase::Clustering => 0,
        Phase::InterEs => 1,
        Phase::IntraEs => 2,
        Phase::Prediction => 3,
    }
}

/// Mordal ranking as a [`Ranking`] for τ computation.
pub fn report_ranking(report: &SearchReport) -> Ranking {
    Ranking::new(report.ranking.iter().map(Candidate::key).collect())
        .expect("report ranking is a permutation")
}

//! Scaling prediction: collect (log r, log Err) points at geometrically
//! shrinking ratios, fit a per-candidate log-log line, and extrapolate the
//! full-data error.
//!
//! Points are collected at `R, R/u, R/u², …`. Once more than `min_points`
//! points exist, an ordinary least-squares line is fitted after each new
//! point; collection stops as soon as the fit's mean squared residual drops
//! to `fit_tol`, and the full-data error is `exp(intercept)` (log r = 0 at
//! r = 1). If the ratio would fall below `min_ratio` before a fit is
//! accepted, the best fit seen is returned flagged unconverged.
//!
//! Because ratios only shrink, every query after the first reads existing
//! checkpoints and is charged evaluation cost only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::Candidate;
use crate::ledger::{CostLedger, Phase};
use crate::oracle::{Oracle, OracleError, ERROR_FLOOR};

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("degenerate fit: {reason}")]
    DegenerateFit { reason: String },
    #[error("invalid scaling config: {reason}")]
    InvalidConfig { reason: String },
    #[error("oracle failed for `{candidate}`: {source}")]
    Oracle {
        candidate: String,
        #[source]
        source: OracleError,
    },
}

/// Knobs of the prediction loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// Largest (initial) data ratio `R`.
    pub max_ratio: f64,
    /// Shrink factor `u` between successive ratios.
    pub shrink: f64,
    /// Minimum number of points `p` before a fit is attempted.
    pub min_points: usize,
    /// Acceptance tolerance `δ` on the fit's mean squared residual.
    pub fit_tol: f64,
    /// Floor below which ratios never go; defaults to `R / u⁵`.
    #[serde(default)]
    pub min_ratio: Option<f64>,
    /// Stop collecting the first time the fit loss exceeds `δ` instead of
    /// stopping once it drops below; comparison mode only.
    #[serde(default)]
    pub strict_literal: bool,
    /// Fit only the most recent `window` points when set.
    #[serde(default)]
    pub window: Option<usize>,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            max_ratio: 0.125,
            shrink: 2.0,
            min_points: 3,
            fit_tol: 5e-5,
            min_ratio: None,
            strict_literal: false,
            window: None,
        }
    }
}

impl ScalingConfig {
    pub fn effective_min_ratio(&self) -> f64 {
        self.min_ratio
            .unwrap_or(self.max_ratio / self.shrink.powi(5))
    }

    pub fn validate(&self) -> Result<(), ScalingError> {
        let bad = |reason: String| Err(ScalingError::InvalidConfig { reason });
        if !(self.max_ratio > 0.0 && self.max_ratio <= 1.0) {
            return bad(format!("max_ratio {} outside (0, 1]", self.max_ratio));
        }
        if !(self.shrink > 1.0) || !self.shrink.is_finite() {
            return bad(format!("shrink {} must exceed 1", self.shrink));
        }
        if self.min_points == 0 {
            return bad("min_points must be positive".into());
        }
        if !(self.fit_tol > 0.0) {
            return bad(format!("fit_tol {} must be positive", self.fit_tol));
        }
        let floor = self.effective_min_ratio();
        if !(floor > 0.0 && floor <= self.max_ratio) {
            return bad(format!("min_ratio {floor} outside (0, max_ratio]"));
        }
        // p points must be reachable before hitting the floor.
        let reach = self.max_ratio / self.shrink.powi(self.min_points as i32 - 1);
        if reach < floor * (1.0 - 1e-12) {
            return bad(format!(
                "min_ratio {floor} leaves fewer than min_points={} ratios",
                self.min_points
            ));
        }
        if let Some(w) = self.window {
            if w < 2 {
                return bad("window must be at least 2".into());
            }
        }
        Ok(())
    }
}

/// One candidate's fitted log-log line and extrapolated full-data error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub candidate: Candidate,
    pub slope: f64,
    pub intercept: f64,
    pub fit_mse: f64,
    /// The fitted (log_ratio, log_error) points.
    pub points: Vec<(f64, f64)>,
    pub predicted_full_error: f64,
    pub converged: bool,
}

/// Ordinary least squares of `log_error` on `log_ratio`.
///
/// Returns `(slope, intercept, fit_mse)` where `fit_mse` is the mean squared
/// residual. At least two distinct abscissae are required.
pub fn fit_loglinear(points: &[(f64, f64)]) -> Result<(f64, f64, f64), ScalingError> {
    if points.len() < 2 {
        return Err(ScalingError::DegenerateFit {
            reason: format!("need at least 2 points, got {}", points.len()),
        });
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx <= 0.0 {
        return Err(ScalingError::DegenerateFit {
            reason: "all log-ratio values coincide".into(),
        });
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mse = points
        .iter()
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<f64>()
        / n;
    Ok((slope, intercept, mse))
}

fn build_fit(
    candidate: &Candidate,
    all_points: &[(f64, f64)],
    window: Option<usize>,
) -> Result<(ScalingFit, f64), ScalingError> {
    let start = window.map_or(0, |w| all_points.len().saturating_sub(w));
    let fitted = &all_points[start..];
    let (slope, intercept, mse) = fit_loglinear(fitted)?;
    let fit = ScalingFit {
        candidate: candidate.clone(),
        slope,
        intercept,
        fit_mse: mse,
        points: fitted.to_vec(),
        predicted_full_error: intercept.exp().clamp(ERROR_FLOOR, 1.0),
        converged: false,
    };
    Ok((fit, mse))
}

/// Runs the prediction loop per candidate; oracle failures are reported per
/// candidate without aborting the others. Costs are booked to the
/// `prediction` phase.
pub fn scaling_prediction(
    shortlist: &[Candidate],
    oracle: &dyn Oracle,
    cfg: &ScalingConfig,
    ledger: &mut CostLedger,
) -> Vec<(Candidate, Result<ScalingFit, ScalingError>)> {
    shortlist
        .iter()
        .map(|candidate| {
            (
                candidate.clone(),
                predict_one(candidate, oracle, cfg, ledger),
            )
        })
        .collect()
}

fn predict_one(
    candidate: &Candidate,
    oracle: &dyn Oracle,
    cfg: &ScalingConfig,
    ledger: &mut CostLedger,
) -> Result<ScalingFit, ScalingError> {
    cfg.validate()?;
    let floor = cfg.effective_min_ratio();
    let mut ratio = cfg.max_ratio;
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut best: Option<ScalingFit> = None;

    loop {
        let record = oracle
            .query(candidate, ratio)
            .map_err(|source| ScalingError::Oracle {
                candidate: candidate.to_string(),
                source,
            })?;
        ledger.charge(Phase::Prediction, &record);
        points.push((ratio.ln(), record.error.max(ERROR_FLOOR).ln()));

        if points.len() > cfg.min_points {
            let (fit, mse) = build_fit(candidate, &points, cfg.window)?;
            if cfg.strict_literal {
                // Literal loop shape: stop collecting once the loss exceeds δ
                // and keep the fit just computed.
                if mse > cfg.fit_tol {
                    return Ok(ScalingFit {
                        converged: true,
                        ..fit
                    });
                }
                best = Some(fit);
            } else if mse <= cfg.fit_tol {
                return Ok(ScalingFit {
                    converged: true,
                    ..fit
                });
            } else if best.as_ref().map_or(true, |b| mse < b.fit_mse) {
                best = Some(fit);
            }
        }

        let next = ratio / cfg.shrink;
        if next < floor * (1.0 - 1e-12) {
            break;
        }
        ratio = next;
    }

    if cfg.strict_literal {
        // The loss never exceeded δ before the floor; the last fit stands.
        if let Some(fit) = best {
            return Ok(ScalingFit {
                converged: true,
                ..fit
            });
        }
    }
    match best {
        Some(fit) => Ok(fit),
        // Fewer than min_points + 1 points were reachable; fit what we have.
        None => build_fit(candidate, &points, cfg.window).map(|(fit, _)| fit),
    }
}

/// Best candidate: converged fits outrank unconverged ones, then the minimum
/// predicted full-data error, ties by id.
pub fn select_best(fits: &[ScalingFit]) -> Option<&ScalingFit> {
    fits.iter().min_by(|a, b| {
        b.converged
            .cmp(&a.converged)
            .then(
                a.predicted_full_error
                    .partial_cmp(&b.predicted_full_error)
                    .expect("finite predictions"),
            )
            .then_with(|| a.candidate.cmp(&b.candidate))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{CostModel, CurveFamily, SyntheticCurveParams, SyntheticOracle, Zoo};

    fn pure(b: f64, beta: f64, sigma: f64) -> SyntheticCurveParams {
        SyntheticCurveParams {
            floor_e: 0.0,
            coeff_b: b,
            exponent_beta: beta,
            noise_sigma: sigma,
            family: CurveFamily::PurePowerLaw,
        }
    }

    fn single_candidate_oracle(params: SyntheticCurveParams, seed: u64) -> SyntheticOracle {
        let zoo = Zoo::new(vec!["v".into()], vec!["l".into()]).unwrap();
        SyntheticOracle::uniform(zoo, params, seed, CostModel::default()).unwrap()
    }

    #[test]
    fn exact_power_law_fit_recovers_parameters() {
        let points: Vec<(f64, f64)> = [0.125f64, 0.0625, 0.03125]
            .iter()
            .map(|r| (r.ln(), (0.3 * r.powf(-0.1)).ln()))
            .collect();
        let (slope, intercept, mse) = fit_loglinear(&points).unwrap();
        assert!((slope - (-0.1)).abs() < 1e-9, "slope {slope}");
        assert!((intercept - 0.3f64.ln()).abs() < 1e-9, "intercept {intercept}");
        assert!(mse <= 1e-12, "mse {mse}");
    }

    #[test]
    fn coincident_abscissae_are_degenerate() {
        let p = (0.125f64.ln(), 0.3f64.ln());
        assert!(matches!(
            fit_loglinear(&[p, p]),
            Err(ScalingError::DegenerateFit { .. })
        ));
        assert!(matches!(
            fit_loglinear(&[p]),
            Err(ScalingError::DegenerateFit { .. })
        ));
    }

    #[test]
    fn constant_error_fits_zero_slope() {
        let points: Vec<(f64, f64)> = [0.125f64, 0.0625, 0.03125]
            .iter()
            .map(|r| (r.ln(), 0.42f64.ln()))
            .collect();
        let (slope, intercept, _) = fit_loglinear(&points).unwrap();
        assert!(slope.abs() < 1e-12);
        assert!((intercept - 0.42f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fit_invariant_to_point_subset_on_exact_data() {
        let point = |r: f64| (r.ln(), (0.3 * r.powf(-0.1)).ln());
        let subsets: Vec<Vec<(f64, f64)>> = vec![
            vec![point(0.125), point(0.0625)],
            vec![point(0.125), point(0.03125), point(0.015625)],
            vec![point(0.0625), point(0.015625)],
        ];
        let fits: Vec<(f64, f64, f64)> = subsets
            .iter()
            .map(|s| fit_loglinear(s).unwrap())
            .collect();
        for w in fits.windows(2) {
            assert!((w[0].0 - w[1].0).abs() < 1e-9);
            assert!((w[0].1 - w[1].1).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_candidate_converges_after_min_points_plus_one() {
        let cfg = ScalingConfig::default();
        let oracle = single_candidate_oracle(pure(0.3, 0.1, 0.0), 0);
        let mut ledger = CostLedger::new();
        let c = Candidate::new("v", "l");
        let results = scaling_prediction(&[c.clone()], &oracle, &cfg, &mut ledger);
        let fit = results[0].1.as_ref().unwrap();
        assert!(fit.converged);
        assert_eq!(fit.points.len(), cfg.min_points + 1);
        assert!(
            (fit.predicted_full_error - 0.3).abs() / 0.3 < 1e-9,
            "predicted {}",
            fit.predicted_full_error
        );
        assert!((fit.slope - (-0.1)).abs() < 1e-9);
        // First query trains to R; the rest are checkpoint reads.
        let expected_cost = 0.125 + 0.01 * (cfg.min_points + 1) as f64;
        assert!((ledger.phase_cost(Phase::Prediction) - expected_cost).abs() < 1e-12);
    }

    #[test]
    fn curved_floor_keeps_fit_unconverged() {
        let params = SyntheticCurveParams {
            floor_e: 0.5,
            coeff_b: 0.05,
            exponent_beta: 0.5,
            noise_sigma: 0.0,
            family: CurveFamily::FlooredPowerLaw,
        };
        let oracle = single_candidate_oracle(params, 0);
        let mut ledger = CostLedger::new();
        let c = Candidate::new("v", "l");
        let results =
            scaling_prediction(&[c], &oracle, &ScalingConfig::default(), &mut ledger);
        let fit = results[0].1.as_ref().unwrap();
        assert!(!fit.converged, "mse {}", fit.fit_mse);
        assert!(fit.fit_mse > 5e-5);
        // All six ladder ratios were exhausted.
        assert!(fit.points.len() >= ScalingConfig::default().min_points);
    }

    #[test]
    fn noisy_prediction_is_accurate_in_the_median() {
        // True Err(1) = 0.300 with σ = 0.01 log-noise.
        let mut rel_errors: Vec<f64> = Vec::new();
        for seed in 0..40 {
            let oracle = single_candidate_oracle(pure(0.3, 0.1, 0.01), seed);
            let mut ledger = CostLedger::new();
            let c = Candidate::new("v", "l");
            let results =
                scaling_prediction(&[c], &oracle, &ScalingConfig::default(), &mut ledger);
            let fit = results[0].1.as_ref().unwrap();
            rel_errors.push((fit.predicted_full_error - 0.3).abs() / 0.3);
        }
        rel_errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = rel_errors[rel_errors.len() / 2];
        assert!(median <= 0.05, "median relative error {median}");
    }

    #[test]
    fn select_best_prefers_converged_then_smallest_prediction() {
        let fit = |id: &str, err: f64, converged: bool| ScalingFit {
            candidate: Candidate::new(id, "l"),
            slope: -0.1,
            intercept: err.ln(),
            fit_mse: 0.0,
            points: vec![],
            predicted_full_error: err,
            converged,
        };
        let fits = vec![fit("a", 0.30, true), fit("b", 0.28, true), fit("c", 0.31, true)];
        assert_eq!(select_best(&fits).unwrap().candidate.ve, "b");

        let fits = vec![fit("a", 0.31, true), fit("b", 0.28, false)];
        assert_eq!(select_best(&fits).unwrap().candidate.ve, "a");

        let fits = vec![fit("b", 0.3, true), fit("a", 0.3, true)];
        assert_eq!(select_best(&fits).unwrap().candidate.ve, "a");

        let single = vec![fit("only", 0.5, false)];
        assert_eq!(select_best(&single).unwrap().candidate.ve, "only");
    }

    #[test]
    fn strict_literal_mode_stops_on_loss_exceeding_tolerance() {
        let params = SyntheticCurveParams {
            floor_e: 0.5,
            coeff_b: 0.05,
            exponent_beta: 0.5,
            noise_sigma: 0.0,
            family: CurveFamily::FlooredPowerLaw,
        };
        let oracle = single_candidate_oracle(params, 0);
        let mut ledger = CostLedger::new();
        let cfg = ScalingConfig {
            strict_literal: true,
            ..ScalingConfig::default()
        };
        let c = Candidate::new("v", "l");
        let results = scaling_prediction(&[c], &oracle, &cfg, &mut ledger);
        let fit = results[0].1.as_ref().unwrap();
        // The very first fit exceeds δ, so exactly p + 1 points are taken.
        assert_eq!(fit.points.len(), cfg.min_points + 1);
        assert!(fit.fit_mse > cfg.fit_tol);
    }

    #[test]
    fn config_floor_must_leave_room_for_points() {
        let cfg = ScalingConfig {
            min_ratio: Some(0.125),
            min_points: 3,
            ..ScalingConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}

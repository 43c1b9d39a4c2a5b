//! Job configuration file: a single JSON document whose nested keys mirror
//! the submission surface (`clustering`, `exploration`, `early_stopping`,
//! `scaling_prediction`), plus the trace source, output path, and seed.
//!
//! The two `R` fields must agree — both phases share one checkpoint
//! high-water chain per candidate.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::SyntheticSpec;
use crate::scaling::ScalingConfig;
use crate::search::{SearchConfig, ShaConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {reason}")]
    Invalid { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringSection {
    pub t_ve: f64,
    pub t_llm: f64,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        Self {
            t_ve: 0.7,
            t_llm: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationSection {
    pub top_k_inter: usize,
    pub top_k_intra: usize,
}

impl Default for ExplorationSection {
    fn default() -> Self {
        Self {
            top_k_inter: 3,
            top_k_intra: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStoppingSection {
    #[serde(rename = "R")]
    pub max_ratio: f64,
    #[serde(rename = "b")]
    pub initial_budget: f64,
    pub eta: f64,
}

impl Default for EarlyStoppingSection {
    fn default() -> Self {
        Self {
            max_ratio: 0.125,
            initial_budget: 0.03,
            eta: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    #[serde(rename = "R")]
    pub max_ratio: f64,
    #[serde(rename = "u")]
    pub shrink: f64,
    pub delta: f64,
    #[serde(rename = "p")]
    pub min_points: usize,
    #[serde(default)]
    pub min_ratio: Option<f64>,
    #[serde(default)]
    pub strict_literal: bool,
    #[serde(default)]
    pub window: Option<usize>,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self {
            max_ratio: 0.125,
            shrink: 2.0,
            delta: 5e-5,
            min_points: 3,
            min_ratio: None,
            strict_literal: false,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    /// Trace bundle directory to replay.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    /// Synthetic spec to generate and run in place of a recorded trace.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Report output path.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clustering: ClusteringSection,
    #[serde(default)]
    pub exploration: ExplorationSection,
    #[serde(default)]
    pub early_stopping: EarlyStoppingSection,
    #[serde(default)]
    pub scaling_prediction: ScalingSection,
    /// Cost booked to the clustering phase per CKA evaluation.
    #[serde(default)]
    pub cka_eval_cost: f64,
}

impl JobConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: JobConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.early_stopping.max_ratio != self.scaling_prediction.max_ratio {
            return Err(ConfigError::Invalid {
                reason: format!(
                    "early_stopping.R = {} and scaling_prediction.R = {} must agree",
                    self.early_stopping.max_ratio, self.scaling_prediction.max_ratio
                ),
            });
        }
        if self.trace.is_some() && self.synthetic.is_some() {
            return Err(ConfigError::Invalid {
                reason: "give either a trace path or a synthetic spec, not both".into(),
            });
        }
        self.to_search_config()
            .validate()
            .map_err(|e| ConfigError::Invalid {
                reason: e.to_string(),
            })
    }

    pub fn to_search_config(&self) -> SearchConfig {
        SearchConfig {
            t_ve: self.clustering.t_ve,
            t_llm: self.clustering.t_llm,
            topk_inter: self.exploration.top_k_inter,
            topk_intra: self.exploration.top_k_intra,
            sha: ShaConfig {
                max_ratio: self.early_stopping.max_ratio,
                initial_budget: self.early_stopping.initial_budget,
                eta: self.early_stopping.eta,
                keep_k: 1,
            },
            scaling: ScalingConfig {
                max_ratio: self.scaling_prediction.max_ratio,
                shrink: self.scaling_prediction.shrink,
                min_points: self.scaling_prediction.min_points,
                fit_tol: self.scaling_prediction.delta,
                min_ratio: self.scaling_prediction.min_ratio,
                strict_literal: self.scaling_prediction.strict_literal,
                window: self.scaling_prediction.window,
            },
            cka_eval_cost: self.cka_eval_cost,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTING_STYLE: &str = r#"{
        "trace": "traces/demo",
        "seed": 0,
        "clustering": {"t_ve": 0.7, "t_llm": 0.8},
        "exploration": {"top_k_inter": 3, "top_k_intra": 3},
        "early_stopping": {"R": 0.125, "b": 0.03, "eta": 2},
        "scaling_prediction": {"R": 0.125, "u": 2, "delta": 5e-5, "p": 3}
    }"#;

    #[test]
    fn parses_listing_style_keys() {
        let config = JobConfig::from_json(LISTING_STYLE).unwrap();
        assert_eq!(config.clustering.t_ve, 0.7);
        assert_eq!(config.early_stopping.initial_budget, 0.03);
        assert_eq!(config.scaling_prediction.min_points, 3);
        let sc = config.to_search_config();
        assert_eq!(sc.sha.rung_budgets(), vec![0.03, 0.06, 0.12, 0.125]);
    }

    #[test]
    fn round_trip_is_identity() {
        let config = JobConfig::from_json(LISTING_STYLE).unwrap();
        let text = config.to_json();
        let back = JobConfig::from_json(&text).unwrap();
        assert_eq!(config, back);
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn defaults_apply_when_sections_missing() {
        let config = JobConfig::from_json("{}").unwrap();
        assert_eq!(config.clustering.t_ve, 0.7);
        assert_eq!(config.exploration.top_k_inter, 3);
        assert_eq!(config.scaling_prediction.delta, 5e-5);
    }

    #[test]
    fn disagreeing_r_fields_are_rejected() {
        let text = r#"{
            "early_stopping": {"R": 0.125, "b": 0.03, "eta": 2},
            "scaling_prediction": {"R": 0.25, "u": 2, "delta": 5e-5, "p": 3}
        }"#;
        let err = JobConfig::from_json(text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"clustering": {"t_ve": 0.7, "t_llm": 0.8, "typo": 1}}"#;
        assert!(JobConfig::from_json(text).is_err());
    }

    #[test]
    fn trace_and_synthetic_are_mutually_exclusive() {
        let text = r#"{
            "trace": "somewhere",
            "synthetic": {"ve_groups": [0], "llm_groups": [0]}
        }"#;
        assert!(JobConfig::from_json(text).is_err());
    }
}

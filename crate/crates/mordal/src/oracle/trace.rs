//! On-disk trace bundles and the replay oracle.
//!
//! A bundle is a directory:
//!
//! ```text
//! manifest.json                      zoo ids, ratio grid, cost model,
//!                                    generator echo, ground truth
//! activations/<ve_id>.csv            VE activations
//! llm_activations/<ve>__<llm>.csv    LLM activations conditioned on a VE
//! distances/ve.json                  optional precomputed distance matrices
//! distances/llm__<ve>.json           (bypass CKA for traces from real models)
//! curves.jsonl                       {"ve":…,"llm":…,"ratio":…,"error":…}
//! ```
//!
//! Activation CSVs are self-describing: the header row carries
//! `model_id,n_samples,n_features`, followed by one sample row per line.
//!
//! Loading validates the schema and that every candidate's curve covers every
//! ratio on the manifest grid; gaps are reported point by point. The replay
//! oracle refuses ratios that are not recorded rather than interpolating.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::synthetic::SyntheticSpec;
use super::{
    validate_query, CheckpointAccountant, CostModel, EvalRecord, Oracle, OracleError, Zoo,
    ERROR_FLOOR,
};
use crate::clustering::{self, Candidate, ClusterError, DistanceMatrix};
use crate::similarity::ActivationMatrix;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O failed at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("trace schema violation at {path}{}: {reason}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Schema {
        path: PathBuf,
        line: Option<usize>,
        reason: String,
    },
    #[error("trace is missing {} required curve point(s): {}", gaps.len(), format_gaps(gaps))]
    Coverage { gaps: Vec<String> },
    #[error("inconsistent trace: {reason}")]
    Inconsistent { reason: String },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

fn format_gaps(gaps: &[String]) -> String {
    const SHOWN: usize = 12;
    if gaps.len() <= SHOWN {
        gaps.join(", ")
    } else {
        format!("{}, … and {} more", gaps[..SHOWN].join(", "), gaps.len() - SHOWN)
    }
}

/// Echo of the generator inputs for synthetic bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub spec: SyntheticSpec,
}

/// The planted best candidate and its full-data error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub best: Candidate,
    pub full_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub ve_ids: Vec<String>,
    pub llm_ids: Vec<String>,
    pub ratio_grid: Vec<f64>,
    pub cost_model: CostModel,
    /// Recorded for provenance; conditioned activations are inputs here, so
    /// the warmup never affects results.
    #[serde(default = "default_warmup_rounds")]
    pub projector_warmup_rounds: u32,
    #[serde(default)]
    pub generator: Option<GeneratorInfo>,
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
}

fn default_warmup_rounds() -> u32 {
    10
}

/// One recorded learning-curve observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub ratio: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CurveRow {
    ve: String,
    llm: String,
    ratio: f64,
    error: f64,
}

/// Precomputed distance matrices shipped with a bundle.
#[derive(Debug, Clone)]
pub struct PrecomputedDistances {
    pub ve: DistanceMatrix,
    pub llm: BTreeMap<String, DistanceMatrix>,
}

/// A fully validated, in-memory trace bundle.
#[derive(Debug, Clone)]
pub struct TraceBundle {
    manifest: TraceManifest,
    zoo: Zoo,
    ve_activations: Vec<ActivationMatrix>,
    llm_activations: BTreeMap<(String, String), ActivationMatrix>,
    distances: Option<PrecomputedDistances>,
    curves: BTreeMap<Candidate, Vec<CurvePoint>>,
}

/// Recorded ratios are matched with a small relative tolerance so grids that
/// are recomputed from config arithmetic still hit the stored points.
pub(crate) fn ratio_matches(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 + 1e-9 * a.abs().max(b.abs())
}

impl TraceBundle {
    /// Assembles and validates a bundle from parts.
    pub fn from_parts(
        manifest: TraceManifest,
        ve_activations: Vec<ActivationMatrix>,
        llm_activations: BTreeMap<(String, String), ActivationMatrix>,
        distances: Option<PrecomputedDistances>,
        curves: BTreeMap<Candidate, Vec<CurvePoint>>,
    ) -> Result<Self, TraceError> {
        let zoo = Zoo::new(manifest.ve_ids.clone(), manifest.llm_ids.clone()).map_err(|e| {
            TraceError::Inconsistent {
                reason: e.to_string(),
            }
        })?;
        for id in zoo.ve_ids().iter().chain(zoo.llm_ids()) {
            if id.contains("__") || id.contains('/') || id.contains('\\') {
                return Err(TraceError::Inconsistent {
                    reason: format!("model id `{id}` is not filesystem-safe (no `__`, `/`, `\\`)"),
                });
            }
        }
        if manifest.ratio_grid.is_empty()
            || manifest
                .ratio_grid
                .iter()
                .any(|r| !(*r > 0.0 && *r <= 1.0) || !r.is_finite())
        {
            return Err(TraceError::Inconsistent {
                reason: "ratio grid must be non-empty with entries in (0, 1]".into(),
            });
        }
        manifest.cost_model.validate().map_err(|e| TraceError::Inconsistent {
            reason: e.to_string(),
        })?;

        let bundle = Self {
            manifest,
            zoo,
            ve_activations,
            llm_activations,
            distances,
            curves,
        };
        bundle.validate_clustering_inputs()?;
        bundle.validate_curves()?;
        Ok(bundle)
    }

    fn validate_clustering_inputs(&self) -> Result<(), TraceError> {
        if let Some(d) = &self.distances {
            let mut want: Vec<&str> = self.manifest.ve_ids.iter().map(String::as_str).collect();
            want.sort_unstable();
            let mut got: Vec<&str> = d.ve.ids().iter().map(String::as_str).collect();
            got.sort_unstable();
            if want != got {
                return Err(TraceError::Inconsistent {
                    reason: "precomputed VE distance matrix does not cover the VE zoo".into(),
                });
            }
            for ve in &self.manifest.ve_ids {
                let m = d.llm.get(ve).ok_or_else(|| TraceError::Inconsistent {
                    reason: format!("missing precomputed LLM distances for VE `{ve}`"),
                })?;
                let mut got: Vec<&str> = m.ids().iter().map(String::as_str).collect();
                got.sort_unstable();
                let mut want: Vec<&str> =
                    self.manifest.llm_ids.iter().map(String::as_str).collect();
                want.sort_unstable();
                if want != got {
                    return Err(TraceError::Inconsistent {
                        reason: format!("LLM distance matrix for `{ve}` does not cover the LLM zoo"),
                    });
                }
            }
            return Ok(());
        }

        // No precomputed distances: activations must be complete.
        for ve in &self.manifest.ve_ids {
            if !self.ve_activations.iter().any(|a| a.model_id() == ve) {
                return Err(TraceError::Inconsistent {
                    reason: format!("missing activations for VE `{ve}`"),
                });
            }
        }
        let n = self.ve_activations[0].n_samples();
        if self.ve_activations.iter().any(|a| a.n_samples() != n) {
            return Err(TraceError::Inconsistent {
                reason: "VE activation matrices disagree on sample count".into(),
            });
        }
        for ve in &self.manifest.ve_ids {
            let mut sample_count = None;
            for llm in &self.manifest.llm_ids {
                let key = (ve.clone(), llm.clone());
                let act = self.llm_activations.get(&key).ok_or_else(|| {
                    TraceError::Inconsistent {
                        reason: format!("missing LLM activations for ({ve}, {llm})"),
                    }
                })?;
                match sample_count {
                    None => sample_count = Some(act.n_samples()),
                    Some(c) if c != act.n_samples() => {
                        return Err(TraceError::Inconsistent {
                            reason: format!(
                                "LLM activations conditioned on `{ve}` disagree on sample count"
                            ),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn validate_curves(&self) -> Result<(), TraceError> {
        let mut gaps = Vec::new();
        for candidate in self.zoo.candidates() {
            let points = self.curves.get(&candidate);
            for &ratio in &self.manifest.ratio_grid {
                let covered = points
                    .map(|ps| ps.iter().any(|p| ratio_matches(p.ratio, ratio)))
                    .unwrap_or(false);
                if !covered {
                    gaps.push(format!("({candidate}, {ratio})"));
                }
            }
            if let Some(ps) = points {
                for p in ps {
                    if !(p.ratio > 0.0 && p.ratio <= 1.0) || !p.ratio.is_finite() {
                        return Err(TraceError::Inconsistent {
                            reason: format!("curve ratio {} for `{candidate}` outside (0, 1]", p.ratio),
                        });
                    }
                    if !(p.error > 0.0 && p.error <= 1.0) || !p.error.is_finite() {
                        return Err(TraceError::Inconsistent {
                            reason: format!("curve error {} for `{candidate}` outside (0, 1]", p.error),
                        });
                    }
                }
            }
        }
        if !gaps.is_empty() {
            return Err(TraceError::Coverage { gaps });
        }
        Ok(())
    }

    pub fn manifest(&self) -> &TraceManifest {
        &self.manifest
    }

    pub fn zoo(&self) -> &Zoo {
        &self.zoo
    }

    pub fn cost_model(&self) -> CostModel {
        self.manifest.cost_model
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.manifest.ground_truth.as_ref()
    }

    pub fn curve_count(&self) -> usize {
        self.curves.len()
    }

    pub fn ve_activation_count(&self) -> usize {
        self.ve_activations.len()
    }

    pub fn llm_activation_count(&self) -> usize {
        self.llm_activations.len()
    }

    pub fn supports_ratio(&self, ratio: f64) -> bool {
        self.manifest
            .ratio_grid
            .iter()
            .any(|&g| ratio_matches(g, ratio))
    }

    pub fn curve_error(&self, candidate: &Candidate, ratio: f64) -> Option<f64> {
        self.curves
            .get(candidate)?
            .iter()
            .find(|p| ratio_matches(p.ratio, ratio))
            .map(|p| p.error)
    }

    /// Full-data errors for every candidate, if ratio 1.0 is recorded.
    pub fn full_errors(&self) -> Option<Vec<(Candidate, f64)>> {
        let mut out = Vec::with_capacity(self.zoo.candidate_count());
        for candidate in self.zoo.candidates() {
            out.push((candidate.clone(), self.curve_error(&candidate, 1.0)?));
        }
        Some(out)
    }

    /// Checks that every candidate covers every required ratio; lists gaps.
    pub fn validate_ratio_coverage(&self, required: &[f64]) -> Result<(), TraceError> {
        let mut gaps = Vec::new();
        for candidate in self.zoo.candidates() {
            for &ratio in required {
                if self.curve_error(&candidate, ratio).is_none() {
                    gaps.push(format!("({candidate}, {ratio})"));
                }
            }
        }
        if gaps.is_empty() {
            Ok(())
        } else {
            Err(TraceError::Coverage { gaps })
        }
    }

    /// The VE distance matrix plus the number of CKA evaluations spent.
    /// Precomputed matrices cost nothing.
    pub fn ve_distances(&self) -> Result<(DistanceMatrix, usize), TraceError> {
        if let Some(d) = &self.distances {
            return Ok((d.ve.clone(), 0));
        }
        if self.ve_activations.len() == 1 {
            let id = self.ve_activations[0].model_id().to_string();
            return Ok((DistanceMatrix::new(vec![id], vec![0.0])?, 0));
        }
        // Ordered by the manifest id list.
        let ordered: Vec<ActivationMatrix> = self
            .manifest
            .ve_ids
            .iter()
            .map(|id| {
                self.ve_activations
                    .iter()
                    .find(|a| a.model_id() == id)
                    .expect("validated at load")
                    .clone()
            })
            .collect();
        Ok(clustering::pairwise_distance_matrix(&ordered)?)
    }

    /// LLM distances conditioned on a VE medoid, plus CKA evaluations spent.
    pub fn llm_distances(&self, ve_id: &str) -> Result<(DistanceMatrix, usize), TraceError> {
        if let Some(d) = &self.distances {
            let m = d.llm.get(ve_id).ok_or_else(|| TraceError::Inconsistent {
                reason: format!("missing precomputed LLM distances for VE `{ve_id}`"),
            })?;
            return Ok((m.clone(), 0));
        }
        let acts: Vec<ActivationMatrix> = self
            .manifest
            .llm_ids
            .iter()
            .map(|llm| {
                self.llm_activations
                    .get(&(ve_id.to_string(), llm.clone()))
                    .cloned()
                    .ok_or_else(|| TraceError::Inconsistent {
                        reason: format!("missing LLM activations for ({ve_id}, {llm})"),
                    })
            })
            .collect::<Result<_, _>>()?;
        if acts.len() == 1 {
            let id = acts[0].model_id().to_string();
            return Ok((DistanceMatrix::new(vec![id], vec![0.0])?, 0));
        }
        Ok(clustering::pairwise_distance_matrix(&acts)?)
    }

    /// Writes the bundle under `dir` (created if needed).
    pub fn save(&self, dir: &Path) -> Result<(), TraceError> {
        let io_err = |path: &Path| {
            let p = path.to_path_buf();
            move |source: std::io::Error| TraceError::Io { path: p.clone(), source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;

        let manifest_path = dir.join("manifest.json");
        let manifest_json =
            serde_json::to_string_pretty(&self.manifest).map_err(|e| TraceError::Schema {
                path: manifest_path.clone(),
                line: None,
                reason: e.to_string(),
            })?;
        fs::write(&manifest_path, manifest_json + "\n").map_err(io_err(&manifest_path))?;

        let act_dir = dir.join("activations");
        fs::create_dir_all(&act_dir).map_err(io_err(&act_dir))?;
        for act in &self.ve_activations {
            let path = act_dir.join(format!("{}.csv", act.model_id()));
            write_activation_csv(&path, act)?;
        }

        let llm_dir = dir.join("llm_activations");
        fs::create_dir_all(&llm_dir).map_err(io_err(&llm_dir))?;
        for ((ve, llm), act) in &self.llm_activations {
            let path = llm_dir.join(format!("{ve}__{llm}.csv"));
            write_activation_csv(&path, act)?;
        }

        if let Some(d) = &self.distances {
            let dist_dir = dir.join("distances");
            fs::create_dir_all(&dist_dir).map_err(io_err(&dist_dir))?;
            let ve_path = dist_dir.join("ve.json");
            write_json(&ve_path, &d.ve)?;
            for (ve, m) in &d.llm {
                write_json(&dist_dir.join(format!("llm__{ve}.json")), m)?;
            }
        }

        let curves_path = dir.join("curves.jsonl");
        let mut file = fs::File::create(&curves_path).map_err(io_err(&curves_path))?;
        for (candidate, points) in &self.curves {
            for p in points {
                let row = CurveRow {
                    ve: candidate.ve.clone(),
                    llm: candidate.llm.clone(),
                    ratio: p.ratio,
                    error: p.error,
                };
                let line = serde_json::to_string(&row).map_err(|e| TraceError::Schema {
                    path: curves_path.clone(),
                    line: None,
                    reason: e.to_string(),
                })?;
                writeln!(file, "{line}").map_err(io_err(&curves_path))?;
            }
        }
        Ok(())
    }

    /// Loads and validates a bundle directory.
    pub fn load(dir: &Path) -> Result<Self, TraceError> {
        let manifest_path = dir.join("manifest.json");
        let manifest_text = fs::read_to_string(&manifest_path).map_err(|source| TraceError::Io {
            path: manifest_path.clone(),
            source,
        })?;
        let manifest: TraceManifest =
            serde_json::from_str(&manifest_text).map_err(|e| TraceError::Schema {
                path: manifest_path.clone(),
                line: Some(e.line()),
                reason: e.to_string(),
            })?;

        let mut ve_activations = Vec::new();
        let act_dir = dir.join("activations");
        if act_dir.is_dir() {
            for name in sorted_files(&act_dir, "csv")? {
                let act = read_activation_csv(&act_dir.join(&name))?;
                let stem = name.trim_end_matches(".csv");
                if act.model_id() != stem {
                    return Err(TraceError::Schema {
                        path: act_dir.join(&name),
                        line: Some(1),
                        reason: format!(
                            "file name `{stem}` disagrees with header model_id `{}`",
                            act.model_id()
                        ),
                    });
                }
                ve_activations.push(act);
            }
        }

        let mut llm_activations = BTreeMap::new();
        let llm_dir = dir.join("llm_activations");
        if llm_dir.is_dir() {
            for name in sorted_files(&llm_dir, "csv")? {
                let stem = name.trim_end_matches(".csv");
                let (ve, llm) = stem.split_once("__").ok_or_else(|| TraceError::Schema {
                    path: llm_dir.join(&name),
                    line: None,
                    reason: "file name must be <ve>__<llm>.csv".into(),
                })?;
                let act = read_activation_csv(&llm_dir.join(&name))?;
                if act.model_id() != llm {
                    return Err(TraceError::Schema {
                        path: llm_dir.join(&name),
                        line: Some(1),
                        reason: format!(
                            "header model_id `{}` should be the LLM id `{llm}`",
                            act.model_id()
                        ),
                    });
                }
                llm_activations.insert((ve.to_string(), llm.to_string()), act);
            }
        }

        let dist_dir = dir.join("distances");
        let distances = if dist_dir.is_dir() {
            let ve: DistanceMatrix = read_json(&dist_dir.join("ve.json"))?;
            let mut llm = BTreeMap::new();
            for name in sorted_files(&dist_dir, "json")? {
                let stem = name.trim_end_matches(".json");
                if let Some(ve_id) = stem.strip_prefix("llm__") {
                    llm.insert(ve_id.to_string(), read_json(&dist_dir.join(&name))?);
                }
            }
            Some(PrecomputedDistances { ve, llm })
        } else {
            None
        };

        let curves_path = dir.join("curves.jsonl");
        let file = fs::File::open(&curves_path).map_err(|source| TraceError::Io {
            path: curves_path.clone(),
            source,
        })?;
        let mut curves: BTreeMap<Candidate, Vec<CurvePoint>> = BTreeMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| TraceError::Io {
                path: curves_path.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let row: CurveRow = serde_json::from_str(&line).map_err(|e| TraceError::Schema {
                path: curves_path.clone(),
                line: Some(idx + 1),
                reason: e.to_string(),
            })?;
            curves
                .entry(Candidate::new(row.ve, row.llm))
                .or_default()
                .push(CurvePoint {
                    ratio: row.ratio,
                    error: row.error,
                });
        }

        Self::from_parts(manifest, ve_activations, llm_activations, distances, curves)
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<String>, TraceError> {
    let mut names = Vec::new();
    let entries = fs::read_dir(dir).map_err(|source| TraceError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| TraceError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(&format!(".{ext}")) {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TraceError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| TraceError::Schema {
        path: path.to_path_buf(),
        line: None,
        reason: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, TraceError> {
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| TraceError::Schema {
        path: path.to_path_buf(),
        line: Some(e.line()),
        reason: e.to_string(),
    })
}

/// Writes `model_id,n_samples,n_features` then one sample row per line.
pub fn write_activation_csv(path: &Path, act: &ActivationMatrix) -> Result<(), TraceError> {
    let mut out = String::new();
    out.push_str(&format!(
        "{},{},{}\n",
        act.model_id(),
        act.n_samples(),
        act.n_features()
    ));
    for row in act.values().rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses the self-describing activation CSV; errors name the file and line.
pub fn read_activation_csv(path: &Path) -> Result<ActivationMatrix, TraceError> {
    let schema = |line: usize, reason: String| TraceError::Schema {
        path: path.to_path_buf(),
        line: Some(line),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| schema(1, "empty file".into()))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 3 {
        return Err(schema(
            1,
            format!("header must be model_id,n_samples,n_features; got {} fields", fields.len()),
        ));
    }
    let model_id = fields[0].trim().to_string();
    let n_samples: usize = fields[1]
        .trim()
        .parse()
        .map_err(|_| schema(1, format!("bad n_samples `{}`", fields[1])))?;
    let n_features: usize = fields[2]
        .trim()
        .parse()
        .map_err(|_| schema(1, format!("bad n_features `{}`", fields[2])))?;

    let mut values = Vec::with_capacity(n_samples * n_features);
    let mut rows = 0;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        if rows > n_samples {
            return Err(schema(idx + 1, format!("more than {n_samples} sample rows")));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_features {
            return Err(schema(
                idx + 1,
                format!("expected {n_features} values, got {}", cells.len()),
            ));
        }
        for cell in cells {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| schema(idx + 1, format!("bad number `{cell}`")))?;
            values.push(v);
        }
    }
    if rows != n_samples {
        return Err(schema(
            rows + 1,
            format!("expected {n_samples} sample rows, got {rows}"),
        ));
    }
    let array = Array2::from_shape_vec((n_samples, n_features), values)
        .map_err(|e| schema(1, e.to_string()))?;
    ActivationMatrix::new(model_id, array).map_err(|e| schema(1, e.to_string()))
}

/// Replay oracle over a loaded bundle. Queries off the recorded grid fail
/// rather than interpolate.
pub struct TraceOracle {
    bundle: Arc<TraceBundle>,
    accountant: CheckpointAccountant,
}

impl TraceOracle {
    pub fn new(bundle: Arc<TraceBundle>) -> Self {
        Self {
            bundle,
            accountant: CheckpointAccountant::new(),
        }
    }

    pub fn bundle(&self) -> &TraceBundle {
        &self.bundle
    }
}

impl Oracle for TraceOracle {
    fn zoo(&self) -> &Zoo {
        self.bundle.zoo()
    }

    fn query(&self, candidate: &Candidate, ratio: f64) -> Result<EvalRecord, OracleError> {
        validate_query(self.bundle.zoo(), candidate, ratio)?;
        let error = self
            .bundle
            .curve_error(candidate, ratio)
            .ok_or_else(|| OracleError::UnsupportedRatio {
                candidate: candidate.to_string(),
                ratio,
            })?
            .max(ERROR_FLOOR);
        let cost = self
            .accountant
            .charge(&self.bundle.cost_model(), candidate, ratio);
        Ok(EvalRecord {
            candidate: candidate.clone(),
            ratio,
            error,
            cost,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::synthetic::{generate_synthetic, SyntheticSpec};

    fn demo_bundle(seed: u64) -> TraceBundle {
        generate_synthetic(&SyntheticSpec::round_robin(3, 2, 3, 2), seed).unwrap()
    }

    #[test]
    fn save_load_round_trip_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = demo_bundle(5);
        bundle.save(dir.path()).unwrap();
        let loaded = TraceBundle::load(dir.path()).unwrap();

        let a = TraceOracle::new(Arc::new(bundle));
        let b = TraceOracle::new(Arc::new(loaded));
        for candidate in a.zoo().candidates() {
            for &ratio in &a.bundle().manifest().ratio_grid.clone() {
                let ra = a.query(&candidate, ratio).unwrap();
                let rb = b.query(&candidate, ratio).unwrap();
                assert_eq!(ra, rb);
            }
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        demo_bundle(9).save(d1.path()).unwrap();
        demo_bundle(9).save(d2.path()).unwrap();
        let read = |d: &Path| {
            let mut all = Vec::new();
            for sub in ["manifest.json", "curves.jsonl"] {
                all.extend(fs::read(d.join(sub)).unwrap());
            }
            all
        };
        assert_eq!(read(d1.path()), read(d2.path()));
    }

    #[test]
    fn missing_curve_point_is_named_in_load_error() {
        let dir = tempfile::tempdir().unwrap();
        demo_bundle(2).save(dir.path()).unwrap();
        let curves_path = dir.path().join("curves.jsonl");
        let text = fs::read_to_string(&curves_path).unwrap();
        let kept: Vec<&str> = text
            .lines()
            .filter(|l| !(l.contains("\"ve0\"") && l.contains("\"llm1\"") && l.contains("0.06")))
            .collect();
        assert!(kept.len() < text.lines().count());
        fs::write(&curves_path, kept.join("\n")).unwrap();
        let err = TraceBundle::load(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ve0__llm1"), "got: {msg}");
        assert!(msg.contains("0.06"), "got: {msg}");
    }

    #[test]
    fn off_grid_ratio_is_refused() {
        let oracle = TraceOracle::new(Arc::new(demo_bundle(3)));
        let c = oracle.zoo().candidates()[0].clone();
        let err = oracle.query(&c, 0.77).unwrap_err();
        assert!(matches!(err, OracleError::UnsupportedRatio { .. }));
    }

    #[test]
    fn replay_is_pure() {
        let oracle = TraceOracle::new(Arc::new(demo_bundle(4)));
        let c = oracle.zoo().candidates()[2].clone();
        let a = oracle.query(&c, 0.125).unwrap();
        let b = oracle.query(&c, 0.125).unwrap();
        assert_eq!(a.error, b.error);
        assert_eq!(a.ratio, b.ratio);
    }

    #[test]
    fn malformed_csv_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "m,2,2\n1.0,2.0\n3.0,oops\n").unwrap();
        let err = read_activation_csv(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("m.csv"), "got: {msg}");
        assert!(msg.contains("line 3"), "got: {msg}");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = demo_bundle(6);
        bundle.save(dir.path()).unwrap();
        let loaded = TraceBundle::load(dir.path()).unwrap();
        let (orig, _) = bundle.ve_distances().unwrap();
        let (back, _) = loaded.ve_distances().unwrap();
        for i in 0..orig.len() {
            for j in 0..orig.len() {
                assert_eq!(orig.get(i, j), back.get(i, j));
            }
        }
    }
}

#[cfg(test)]
mod float_debug {
    #[test]
    fn json_float_round_trip() {
        let v: f64 = 0.42156330499876693;
        let s = serde_json::to_string(&v).unwrap();
        let back: f64 = serde_json::from_str(&s).unwrap();
        assert!(back == v, "serialized {s}, reparsed {back:?} vs {v:?}");
        let d: f64 = "0.42156330499876693".parse().unwrap();
        let s2 = format!("{d}");
        assert_eq!(s2.parse::<f64>().unwrap(), d, "Display form {s2}");
    }
}

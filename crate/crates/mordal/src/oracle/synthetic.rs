//! Synthetic learning curves and the seeded trace-bundle generator.
//!
//! Curves follow a power law in the data ratio `r`: either
//! `Err(r) = b·r^(−β)` (pure) or `Err(r) = e + b·r^(−β)` (floored), clamped
//! to `[ERROR_FLOOR, 1]`. Optional Gaussian noise is applied to `log Err`,
//! derived deterministically from the seed, the candidate, and the ratio, so
//! identical queries always return identical records.
//!
//! [`generate_synthetic`] builds a complete in-memory trace bundle from a
//! planted group structure: per-group activation bases plus per-model noise,
//! conditioned LLM activations for every (VE, LLM) pair, and per-candidate
//! curves whose full-data error is a function of the (VE group, LLM group)
//! pair times a small per-candidate jitter.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::trace::{CurvePoint, GeneratorInfo, GroundTruth, TraceBundle, TraceManifest};
use super::{
    validate_query, CheckpointAccountant, CostModel, EvalRecord, Oracle, OracleError, ERROR_FLOOR,
};
use crate::clustering::Candidate;
use crate::similarity::ActivationMatrix;
use ndarray::Array2;

/// Learning-curve functional form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CurveFamily {
    #[serde(rename = "pure-power-law")]
    PurePowerLaw,
    #[default]
    #[serde(rename = "floored-power-law")]
    FlooredPowerLaw,
}

/// Parameters of one candidate's curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCurveParams {
    pub floor_e: f64,
    pub coeff_b: f64,
    pub exponent_beta: f64,
    pub noise_sigma: f64,
    pub family: CurveFamily,
}

impl SyntheticCurveParams {
    pub fn validate(&self) -> Result<(), OracleError> {
        let ok = self.floor_e >= 0.0
            && self.coeff_b >= 0.0
            && self.exponent_beta > 0.0
            && self.noise_sigma >= 0.0
            && [self.floor_e, self.coeff_b, self.exponent_beta, self.noise_sigma]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(OracleError::InvalidSpec {
                reason: format!("curve parameters out of range: {self:?}"),
            });
        }
        Ok(())
    }

    /// Noise-free curve value at `ratio`, clamped to `[ERROR_FLOOR, 1]`.
    pub fn base_error(&self, ratio: f64) -> f64 {
        let power = self.coeff_b * ratio.powf(-self.exponent_beta);
        let raw = match self.family {
            CurveFamily::PurePowerLaw => power,
            CurveFamily::FlooredPowerLaw => self.floor_e + power,
        };
        raw.clamp(ERROR_FLOOR, 1.0)
    }

    /// Curve value with Gaussian noise `z ~ N(0, 1)` applied on `log Err`.
    pub fn noisy_error(&self, ratio: f64, z: f64) -> f64 {
        let base = self.base_error(ratio);
        (base.ln() + self.noise_sigma * z)
            .exp()
            .clamp(ERROR_FLOOR, 1.0)
    }
}

/// Deterministic sub-seed derived from byte chunks (FNV-1a).
fn subseed(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut mix = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    };
    mix(&seed.to_le_bytes());
    for p in parts {
        mix(p);
    }
    h
}

fn noise_z(seed: u64, candidate: &Candidate, ratio: f64) -> f64 {
    let s = subseed(
        seed,
        &[
            b"curve-noise",
            candidate.ve.as_bytes(),
            candidate.llm.as_bytes(),
            &ratio.to_bits().to_le_bytes(),
        ],
    );
    StandardNormal.sample(&mut StdRng::seed_from_u64(s))
}

/// Function-backed oracle: evaluates synthetic curves at any ratio in (0, 1].
pub struct SyntheticOracle {
    zoo: Zoo,
    curves: BTreeMap<Candidate, SyntheticCurveParams>,
    seed: u64,
    cost_model: CostModel,
    accountant: CheckpointAccountant,
}

use super::Zoo;

impl SyntheticOracle {
    pub fn new(
        zoo: Zoo,
        curves: BTreeMap<Candidate, SyntheticCurveParams>,
        seed: u64,
        cost_model: CostModel,
    ) -> Result<Self, OracleError> {
        cost_model.validate()?;
        for candidate in zoo.candidates() {
            let params = curves.get(&candidate).ok_or_else(|| OracleError::InvalidSpec {
                reason: format!("no curve for candidate `{candidate}`"),
            })?;
            params.validate()?;
        }
        Ok(Self {
            zoo,
            curves,
            seed,
            cost_model,
            accountant: CheckpointAccountant::new(),
        })
    }

    /// One curve shared by every candidate; convenient for small tests.
    pub fn uniform(
        zoo: Zoo,
        params: SyntheticCurveParams,
        seed: u64,
        cost_model: CostModel,
    ) -> Result<Self, OracleError> {
        let curves = zoo.candidates().into_iter().map(|c| (c, params)).collect();
        Self::new(zoo, curves, seed, cost_model)
    }
}

impl Oracle for SyntheticOracle {
    fn zoo(&self) -> &Zoo {
        &self.zoo
    }

    fn query(&self, candidate: &Candidate, ratio: f64) -> Result<EvalRecord, OracleError> {
        validate_query(&self.zoo, candidate, ratio)?;
        let params = &self.curves[candidate];
        let error = if params.noise_sigma > 0.0 {
            params.noisy_error(ratio, noise_z(self.seed, candidate, ratio))
        } else {
            params.base_error(ratio)
        };
        let cost = self.accountant.charge(&self.cost_model, candidate, ratio);
        Ok(EvalRecord {
            candidate: candidate.clone(),
            ratio,
            error,
            cost,
        })
    }
}

/// LLM group assignment: one global partition, or one partition per VE group
/// (conditioning on different VE clusters may separate the LLMs differently).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupAssignment {
    Global(Vec<usize>),
    PerVeGroup(Vec<Vec<usize>>),
}

impl GroupAssignment {
    fn n_models(&self) -> usize {
        match self {
            GroupAssignment::Global(v) => v.len(),
            GroupAssignment::PerVeGroup(vs) => vs.first().map_or(0, Vec::len),
        }
    }

    fn for_ve_group(&self, ve_group: usize) -> &[usize] {
        match self {
            GroupAssignment::Global(v) => v,
            GroupAssignment::PerVeGroup(vs) => &vs[ve_group],
        }
    }
}

/// Per-(VE group, LLM group) curve shape: the full-data error level, the
/// power-law exponent, and what fraction of the level is irreducible floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupCurve {
    pub full_error: f64,
    pub exponent_beta: f64,
    #[serde(default = "GroupCurve::default_floor_fraction")]
    pub floor_fraction: f64,
}

impl GroupCurve {
    fn default_floor_fraction() -> f64 {
        0.1
    }
}

/// Generator input: zoo sizes come from the group assignment lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Planted VE group per vision encoder; length = VE zoo size.
    pub ve_groups: Vec<usize>,
    /// Planted LLM group per language model; length = LLM zoo size.
    pub llm_groups: GroupAssignment,
    #[serde(default = "SyntheticSpec::default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "SyntheticSpec::default_ve_features")]
    pub ve_features: usize,
    #[serde(default = "SyntheticSpec::default_llm_features")]
    pub llm_features: usize,
    /// Relative magnitude of per-model activation noise around group bases.
    #[serde(default = "SyntheticSpec::default_activation_noise")]
    pub activation_noise: f64,
    #[serde(default)]
    pub family: CurveFamily,
    /// Explicit per-(VE group, LLM group) curves; derived from the seed when
    /// absent.
    #[serde(default)]
    pub group_curves: Option<Vec<Vec<GroupCurve>>>,
    /// Std-dev of Gaussian noise on log error for recorded points at r < 1.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Half-width of the per-candidate multiplicative jitter on log error.
    #[serde(default = "SyntheticSpec::default_candidate_jitter")]
    pub candidate_jitter: f64,
    /// Ratios recorded in the bundle; defaults to [`default_ratio_grid`].
    #[serde(default)]
    pub ratio_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub cost_model: CostModel,
}

impl SyntheticSpec {
    fn default_n_samples() -> usize {
        64
    }

    fn default_ve_features() -> usize {
        16
    }

    fn default_llm_features() -> usize {
        32
    }

    fn default_activation_noise() -> f64 {
        0.05
    }

    fn default_candidate_jitter() -> f64 {
        0.02
    }

    /// Round-robin assignment helper for quick specs.
    pub fn round_robin(n_ve: usize, n_ve_groups: usize, n_llm: usize, n_llm_groups: usize) -> Self {
        let ve_groups = (0..n_ve).map(|i| i % n_ve_groups).collect();
        let llm_groups = GroupAssignment::Global((0..n_llm).map(|j| j % n_llm_groups).collect());
        Self {
            ve_groups,
            llm_groups,
            n_samples: Self::default_n_samples(),
            ve_features: Self::default_ve_features(),
            llm_features: Self::default_llm_features(),
            activation_noise: Self::default_activation_noise(),
            family: CurveFamily::default(),
            group_curves: None,
            noise_sigma: 0.0,
            candidate_jitter: Self::default_candidate_jitter(),
            ratio_grid: None,
            cost_model: CostModel::default(),
        }
    }

    fn n_ve(&self) -> usize {
        self.ve_groups.len()
    }

    fn n_llm(&self) -> usize {
        self.llm_groups.n_models()
    }

    fn n_ve_groups(&self) -> usize {
        self.ve_groups.iter().max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.n_ve() == 0 || self.n_llm() == 0 {
            return Err(OracleError::InvalidSpec {
                reason: "zoo sizes must be positive".into(),
            });
        }
        if self.n_samples < 8 || self.ve_features == 0 || self.llm_features == 0 {
            return Err(OracleError::InvalidSpec {
                reason: "need n_samples >= 8 and positive feature counts".into(),
            });
        }
        validate_groups("ve", &self.ve_groups)?;
        let assignments: Vec<&[usize]> = match &self.llm_groups {
            GroupAssignment::Global(v) => vec![v.as_slice()],
            GroupAssignment::PerVeGroup(vs) => {
                if vs.len() != self.n_ve_groups() {
                    return Err(OracleError::InvalidSpec {
                        reason: format!(
                            "per-VE-group llm assignment has {} entries for {} VE groups",
                            vs.len(),
                            self.n_ve_groups()
                        ),
                    });
                }
                vs.iter().map(|v| v.as_slice()).collect()
            }
        };
        for a in &assignments {
            if a.len() != self.n_llm() {
                return Err(OracleError::InvalidSpec {
                    reason: "llm group assignments must all cover the same llm zoo".into(),
                });
            }
            validate_groups("llm", a)?;
        }
        if let Some(gc) = &self.group_curves {
            if gc.len() != self.n_ve_groups() {
                return Err(OracleError::InvalidSpec {
                    reason: "group_curves rows must match VE group count".into(),
                });
            }
            for (gv, row) in gc.iter().enumerate() {
                let want = self
                    .llm_groups
                    .for_ve_group(gv)
                    .iter()
                    .max()
                    .map_or(0, |m| m + 1);
                if row.len() != want {
                    return Err(OracleError::InvalidSpec {
                        reason: format!(
                            "group_curves row {gv} has {} entries, expected {want}",
                            row.len()
                        ),
                    });
                }
                for c in row {
                    if !(c.full_error > ERROR_FLOOR && c.full_error <= 1.0)
                        || c.exponent_beta <= 0.0
                        || !(0.0..1.0).contains(&c.floor_fraction)
                    {
                        return Err(OracleError::InvalidSpec {
                            reason: format!("group curve out of range: {c:?}"),
                        });
                    }
                }
            }
        }
        if self.noise_sigma < 0.0 || self.candidate_jitter < 0.0 || self.activation_noise < 0.0 {
            return Err(OracleError::InvalidSpec {
                reason: "noise magnitudes must be non-negative".into(),
            });
        }
        if let Some(grid) = &self.ratio_grid {
            if grid.is_empty() || grid.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
                return Err(OracleError::InvalidSpec {
                    reason: "ratio grid entries must lie in (0, 1]".into(),
                });
            }
        }
        self.cost_model.validate()?;
        Ok(())
    }
}

fn validate_groups(label: &str, groups: &[usize]) -> Result<(), OracleError> {
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    for g in 0..n_groups {
        if !groups.contains(&g) {
            return Err(OracleError::InvalidSpec {
                reason: format!("{label} group {g} is empty"),
            });
        }
    }
    Ok(())
}

/// Ratios covering the default early-stopping ladder, the default scaling
/// ladder, and the full-data point.
pub fn default_ratio_grid() -> Vec<f64> {
    let mut grid = vec![
        0.125 / 32.0,
        0.125 / 16.0,
        0.125 / 8.0,
        0.03,
        0.125 / 4.0,
        0.06,
        0.125 / 2.0,
        0.12,
        0.125,
        1.0,
    ];
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid
}

fn model_ids(prefix: &str, n: usize) -> Vec<String> {
    let width = (n.max(1) - 1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

fn seeded_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

/// Builds a complete trace bundle with planted structure; deterministic in
/// `(spec, seed)`. The planted best candidate is asserted to realize the
/// minimum full-data error before the bundle is returned.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<TraceBundle, OracleError> {
    spec.validate()?;
    let ve_ids = model_ids("ve", spec.n_ve());
    let llm_ids = model_ids("llm", spec.n_llm());
    let zoo = Zoo::new(ve_ids.clone(), llm_ids.clone())?;

    // VE activations: shared group basis plus small per-model noise.
    let n_ve_groups = spec.n_ve_groups();
    let ve_bases: Vec<Array2<f64>> = (0..n_ve_groups)
        .map(|g| {
            seeded_matrix(
                spec.n_samples,
                spec.ve_features,
                1.0,
                subseed(seed, &[b"ve-basis", &(g as u64).to_le_bytes()]),
            )
        })
        .collect();
    let mut ve_activations = Vec::with_capacity(spec.n_ve());
    for (i, id) in ve_ids.iter().enumerate() {
        let noise = seeded_matrix(
            spec.n_samples,
            spec.ve_features,
            spec.activation_noise,
            subseed(seed, &[b"ve-noise", &(i as u64).to_le_bytes()]),
        );
        let values = &ve_bases[spec.ve_groups[i]] + &noise;
        ve_activations.push(ActivationMatrix::new(id.clone(), values).map_err(spec_err)?);
    }

    // Conditioned LLM activations for every (VE, LLM) pair. The basis depends
    // on the (VE group, LLM group) pair so that clustering conditioned on any
    // member of a VE group recovers that group's LLM partition.
    let mut llm_activations = BTreeMap::new();
    for (i, ve_id) in ve_ids.iter().enumerate() {
        let gv = spec.ve_groups[i];
        let assignment = spec.llm_groups.for_ve_group(gv);
        for (j, llm_id) in llm_ids.iter().enumerate() {
            let gl = assignment[j];
            let basis = seeded_matrix(
                spec.n_samples,
                spec.llm_features,
                1.0,
                subseed(
                    seed,
                    &[b"llm-basis", &(gv as u64).to_le_bytes(), &(gl as u64).to_le_bytes()],
                ),
            );
            let noise = seeded_matrix(
                spec.n_samples,
                spec.llm_features,
                spec.activation_noise,
                subseed(
                    seed,
                    &[b"llm-noise", &(i as u64).to_le_bytes(), &(j as u64).to_le_bytes()],
                ),
            );
            let values = &basis + &noise;
            llm_activations.insert(
                (ve_id.clone(), llm_id.clone()),
                ActivationMatrix::new(llm_id.clone(), values).map_err(spec_err)?,
            );
        }
    }

    // Per-(VE group, LLM group) curve shapes.
    let group_curves = match &spec.group_curves {
        Some(gc) => gc.clone(),
        None => derive_group_curves(spec, seed),
    };

    // Per-candidate curves: group curve scaled by a multiplicative jitter.
    let grid = spec.ratio_grid.clone().unwrap_or_else(default_ratio_grid);
    let mut grid_sorted = grid.clone();
    grid_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid_sorted.dedup();

    let mut curve_points = BTreeMap::new();
    let mut designed_full: Vec<(Candidate, f64)> = Vec::new();
    for (i, ve_id) in ve_ids.iter().enumerate() {
        let gv = spec.ve_groups[i];
        let assignment = spec.llm_groups.for_ve_group(gv);
        for (j, llm_id) in llm_ids.iter().enumerate() {
            let candidate = Candidate::new(ve_id.clone(), llm_id.clone());
            let shape = &group_curves[gv][assignment[j]];
            let jitter = if spec.candidate_jitter > 0.0 {
                let mut rng = StdRng::seed_from_u64(subseed(
                    seed,
                    &[b"jitter", &(i as u64).to_le_bytes(), &(j as u64).to_le_bytes()],
                ));
                rng.gen_range(-spec.candidate_jitter..spec.candidate_jitter).exp()
            } else {
                1.0
            };
            let (floor_e, coeff_b) = match spec.family {
                CurveFamily::PurePowerLaw => (0.0, shape.full_error * jitter),
                CurveFamily::FlooredPowerLaw => (
                    shape.full_error * shape.floor_fraction * jitter,
                    shape.full_error * (1.0 - shape.floor_fraction) * jitter,
                ),
            };
            let params = SyntheticCurveParams {
                floor_e,
                coeff_b,
                exponent_beta: shape.exponent_beta,
                noise_sigma: spec.noise_sigma,
                family: spec.family,
            };
            params.validate()?;
            let points: Vec<CurvePoint> = grid_sorted
                .iter()
                .map(|&ratio| {
                    // Ground truth at r = 1 is the noise-free curve value.
                    let error = if ratio >= 1.0 || spec.noise_sigma == 0.0 {
                        params.base_error(ratio)
                    } else {
                        params.noisy_error(ratio, noise_z(seed, &candidate, ratio))
                    };
                    CurvePoint { ratio, error }
                })
                .collect();
            designed_full.push((candidate.clone(), params.base_error(1.0)));
            curve_points.insert(candidate, points);
        }
    }

    // The planted best must realize the minimum full-data error uniquely.
    let (best, best_error) = designed_full
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)))
        .cloned()
        .expect("non-empty candidate set");
    let ties = designed_full
        .iter()
        .filter(|(c, e)| *e == best_error && *c != best)
        .count();
    if ties > 0 {
        return Err(OracleError::InvalidSpec {
            reason: format!("planted best is not unique: {ties} candidates tie at {best_error}"),
        });
    }

    let manifest = TraceManifest {
        ve_ids,
        llm_ids,
        ratio_grid: grid_sorted,
        cost_model: spec.cost_model,
        projector_warmup_rounds: 10,
        generator: Some(GeneratorInfo {
            seed,
            spec: spec.clone(),
        }),
        ground_truth: Some(GroundTruth {
            best,
            full_error: best_error,
        }),
    };
    debug_assert!(zoo.candidate_count() > 0);
    TraceBundle::from_parts(manifest, ve_activations, llm_activations, None, curve_points).map_err(
        |e| OracleError::InvalidSpec {
            reason: format!("generated bundle failed validation: {e}"),
        },
    )
}

fn derive_group_curves(spec: &SyntheticSpec, seed: u64) -> Vec<Vec<GroupCurve>> {
    // Distinct full-error levels spread over [0.18, 0.60], shuffled by seed,
    // so exactly one (VE group, LLM group) pair is planted best with a clear
    // margin over the next.
    let mut pair_slots = Vec::new();
    for gv in 0..spec.n_ve_groups() {
        let n_gl = spec
            .llm_groups
            .for_ve_group(gv)
            .iter()
            .max()
            .map_or(0, |m| m + 1);
        for gl in 0..n_gl {
            pair_slots.push((gv, gl));
        }
    }
    let count = pair_slots.len();
    let mut levels: Vec<f64> = (0..count)
        .map(|k| {
            if count == 1 {
                0.3
            } else {
                0.18 + 0.42 * k as f64 / (count - 1) as f64
            }
        })
        .collect();
    let mut rng = StdRng::seed_from_u64(subseed(seed, &[b"group-curves"]));
    for i in (1..levels.len()).rev() {
        levels.swap(i, rng.gen_range(0..=i));
    }
    let mut out: Vec<Vec<GroupCurve>> = Vec::new();
    for (slot, (gv, gl)) in pair_slots.iter().enumerate() {
        if out.len() <= *gv {
            out.resize_with(gv + 1, Vec::new);
        }
        debug_assert_eq!(out[*gv].len(), *gl);
        out[*gv].push(GroupCurve {
            full_error: levels[slot],
            exponent_beta: rng.gen_range(0.08..0.15),
            floor_fraction: 0.1,
        });
    }
    out
}

fn spec_err(e: crate::similarity::SimilarityError) -> OracleError {
    OracleError::InvalidSpec {
        reason: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pure(b: f64, beta: f64) -> SyntheticCurveParams {
        SyntheticCurveParams {
            floor_e: 0.0,
            coeff_b: b,
            exponent_beta: beta,
            noise_sigma: 0.0,
            family: CurveFamily::PurePowerLaw,
        }
    }

    #[test]
    fn pure_power_law_matches_closed_form() {
        let zoo = Zoo::new(vec!["v".into()], vec!["l".into()]).unwrap();
        let oracle =
            SyntheticOracle::uniform(zoo, pure(0.3, 0.1), 0, CostModel::default()).unwrap();
        let rec = oracle.query(&Candidate::new("v", "l"), 0.125).unwrap();
        assert!((rec.error - 0.3693).abs() < 1e-4, "got {}", rec.error);
    }

    #[test]
    fn checkpoint_reuse_cost_sequence() {
        let zoo = Zoo::new(vec!["v".into()], vec!["l".into()]).unwrap();
        let oracle =
            SyntheticOracle::uniform(zoo, pure(0.3, 0.1), 0, CostModel::default()).unwrap();
        let c = Candidate::new("v", "l");
        let first = oracle.query(&c, 0.125).unwrap();
        assert!((first.cost - (0.125 + 0.01)).abs() < 1e-12);
        let second = oracle.query(&c, 0.0625).unwrap();
        assert!((second.cost - 0.01).abs() < 1e-12);
    }

    #[test]
    fn floored_family_with_vanishing_coefficient_is_flat() {
        let params = SyntheticCurveParams {
            floor_e: 0.4,
            coeff_b: 0.0,
            exponent_beta: 0.1,
            noise_sigma: 0.0,
            family: CurveFamily::FlooredPowerLaw,
        };
        for ratio in [0.01, 0.125, 0.5, 1.0] {
            assert!((params.base_error(ratio) - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_curves_are_monotone_in_ratio() {
        let params = SyntheticCurveParams {
            floor_e: 0.05,
            coeff_b: 0.3,
            exponent_beta: 0.12,
            noise_sigma: 0.0,
            family: CurveFamily::FlooredPowerLaw,
        };
        let mut prev = f64::INFINITY;
        for ratio in [0.01, 0.02, 0.05, 0.125, 0.3, 0.7, 1.0] {
            let e = params.base_error(ratio);
            assert!(e <= prev, "error increased at ratio {ratio}");
            prev = e;
        }
    }

    #[test]
    fn noiseless_log_linearity_is_exact() {
        let params = pure(0.3, 0.1);
        for ratio in [0.125f64, 0.0625, 0.03125] {
            let expected = (0.3f64).ln() - 0.1 * ratio.ln();
            assert!((params.base_error(ratio).ln() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_queries_return_identical_records() {
        let zoo = Zoo::new(vec!["v".into()], vec!["l".into()]).unwrap();
        let mut params = pure(0.3, 0.1);
        params.noise_sigma = 0.05;
        let oracle = SyntheticOracle::uniform(zoo, params, 7, CostModel::default()).unwrap();
        let c = Candidate::new("v", "l");
        let a = oracle.query(&c, 0.06).unwrap();
        let b = oracle.query(&c, 0.06).unwrap();
        assert_eq!(a.error, b.error);
    }

    #[test]
    fn generator_counts_and_determinism() {
        let spec = SyntheticSpec::round_robin(7, 3, 7, 2);
        let bundle = generate_synthetic(&spec, 42).unwrap();
        assert_eq!(bundle.manifest().ve_ids.len(), 7);
        assert_eq!(bundle.curve_count(), 49);
        assert_eq!(bundle.ve_activation_count(), 7);
        assert_eq!(bundle.llm_activation_count(), 49);

        let again = generate_synthetic(&spec, 42).unwrap();
        assert_eq!(
            serde_json::to_string(bundle.manifest()).unwrap(),
            serde_json::to_string(again.manifest()).unwrap()
        );
        let other = generate_synthetic(&spec, 43).unwrap();
        assert_ne!(
            serde_json::to_string(bundle.manifest().ground_truth.as_ref().unwrap()).unwrap(),
            serde_json::to_string(other.manifest().ground_truth.as_ref().unwrap()).unwrap()
        );
    }

    #[test]
    fn planted_best_realizes_minimum_full_error() {
        for seed in 0..5 {
            let spec = SyntheticSpec::round_robin(7, 2, 7, 3);
            let bundle = generate_synthetic(&spec, seed).unwrap();
            let best = bundle.manifest().ground_truth.as_ref().unwrap().best.clone();
            let mut min_c = None;
            let mut min_e = f64::INFINITY;
            for (c, e) in bundle.full_errors().unwrap() {
                if e < min_e {
                    min_e = e;
                    min_c = Some(c);
                }
            }
            assert_eq!(min_c.unwrap(), best);
        }
    }

    #[test]
    fn empty_group_is_a_spec_error() {
        let spec = SyntheticSpec {
            ve_groups: vec![0, 0, 2], // group 1 missing
            ..SyntheticSpec::round_robin(3, 1, 2, 1)
        };
        assert!(matches!(
            generate_synthetic(&spec, 0),
            Err(OracleError::InvalidSpec { .. })
        ));
    }

    #[test]
    fn default_grid_is_sorted_and_in_range() {
        let grid = default_ratio_grid();
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        assert!(grid.iter().all(|r| *r > 0.0 && *r <= 1.0));
        assert_eq!(*grid.last().unwrap(), 1.0);
    }
}

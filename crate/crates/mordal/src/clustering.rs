//! Distance matrices, threshold-cut hierarchical clustering, medoid
//! selection, and the two-step candidate-clustering procedure.
//!
//! Vision encoders are clustered first on `1 − CKA` distances. For each
//! vision-encoder cluster, the language models are clustered on distances
//! computed from activations conditioned on that cluster's medoid, and the
//! Cartesian product of the two clusters forms a candidate cluster. The
//! clustering threshold `t ∈ [0, 1]` is a similarity bound: the dendrogram is
//! cut at distance height `1 − t`, so a larger `t` yields at least as many
//! clusters.
//!
//! All steps are deterministic: merges and medoids break ties by
//! lexicographically smallest model id.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::{self, ActivationMatrix, SimilarityError};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("similarity failed for pair ({a}, {b}): {source}")]
    Similarity {
        a: String,
        b: String,
        #[source]
        source: SimilarityError,
    },
    #[error("threshold {t} outside [0, 1]")]
    InvalidThreshold { t: f64 },
    #[error("unknown model id `{id}`")]
    UnknownId { id: String },
    #[error("need at least {min} models, got {got}")]
    TooFewModels { min: usize, got: usize },
    #[error("duplicate model id `{id}`")]
    DuplicateId { id: String },
    #[error("invalid distance matrix: {reason}")]
    InvalidMatrix { reason: String },
    #[error("activation source failed for (ve medoid `{ve_medoid}`): {reason}")]
    ActivationSource { ve_medoid: String, reason: String },
}

/// Symmetric pairwise dissimilarities (`1 − CKA`) with a zero diagonal.
///
/// Serializes as `{ "ids": [...], "values": [...] }` with row-major values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DistanceMatrixRepr", into = "DistanceMatrixRepr")]
pub struct DistanceMatrix {
    ids: Vec<String>,
    values: Vec<f64>, // row-major n×n
}

#[derive(Serialize, Deserialize)]
struct DistanceMatrixRepr {
    ids: Vec<String>,
    values: Vec<f64>,
}

impl TryFrom<DistanceMatrixRepr> for DistanceMatrix {
    type Error = String;

    fn try_from(repr: DistanceMatrixRepr) -> Result<Self, String> {
        DistanceMatrix::new(repr.ids, repr.values).map_err(|e| e.to_string())
    }
}

impl From<DistanceMatrix> for DistanceMatrixRepr {
    fn from(m: DistanceMatrix) -> Self {
        Self {
            ids: m.ids,
            values: m.values,
        }
    }
}

impl DistanceMatrix {
    /// Validates shape, symmetry, zero diagonal, range, and id uniqueness.
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self, ClusterError> {
        let n = ids.len();
        if n < 1 {
            return Err(ClusterError::TooFewModels { min: 1, got: 0 });
        }
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(ClusterError::DuplicateId { id: id.clone() });
            }
        }
        if values.len() != n * n {
            return Err(ClusterError::InvalidMatrix {
                reason: format!("expected {} values for {} ids, got {}", n * n, n, values.len()),
            });
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(ClusterError::InvalidMatrix {
                    reason: format!("nonzero diagonal at `{}`", ids[i]),
                });
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(ClusterError::InvalidMatrix {
                        reason: format!("entry ({}, {}) = {v} outside [0, 1]", ids[i], ids[j]),
                    });
                }
                if (v - values[j * n + i]).abs() > 1e-9 {
                    return Err(ClusterError::InvalidMatrix {
                        reason: format!("asymmetry between `{}` and `{}`", ids[i], ids[j]),
                    });
                }
            }
        }
        Ok(Self { ids, values })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn get_by_id(&self, a: &str, b: &str) -> Result<f64, ClusterError> {
        let i = self.index_of(a)?;
        let j = self.index_of(b)?;
        Ok(self.get(i, j))
    }

    fn index_of(&self, id: &str) -> Result<usize, ClusterError> {
        self.ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| ClusterError::UnknownId { id: id.to_string() })
    }
}

/// Flat clusters cut from the dendrogram, with one medoid per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<Vec<String>>,
    pub medoids: Vec<String>,
    pub threshold: f64,
}

/// One (vision encoder, language model) pairing.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub ve: String,
    pub llm: String,
}

impl Candidate {
    pub fn new(ve: impl Into<String>, llm: impl Into<String>) -> Self {
        Self {
            ve: ve.into(),
            llm: llm.into(),
        }
    }

    /// Stable key used in file names and map keys.
    pub fn key(&self) -> String {
        format!("{}__{}", self.ve, self.llm)
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}__{}", self.ve, self.llm)
    }
}

/// A block of the candidate space: one VE cluster × one LLM cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCluster {
    pub members: Vec<Candidate>,
    pub representative: Candidate,
}

/// Supplies, for a given VE medoid, one conditioned activation matrix per
/// language model.
pub trait LlmActivationSource {
    fn llm_activations(&self, ve_medoid: &str) -> Result<Vec<ActivationMatrix>, ClusterError>;
}

impl<F> LlmActivationSource for F
where
    F: Fn(&str) -> Result<Vec<ActivationMatrix>, ClusterError>,
{
    fn llm_activations(&self, ve_medoid: &str) -> Result<Vec<ActivationMatrix>, ClusterError> {
        self(ve_medoid)
    }
}

/// Full pairwise `1 − CKA` matrix over the given models.
///
/// Similarity failures are tagged with the offending pair. Also returns the
/// number of CKA evaluations performed, for cost attribution.
pub fn pairwise_distance_matrix(
    activations: &[ActivationMatrix],
) -> Result<(DistanceMatrix, usize), ClusterError> {
    let n = activations.len();
    if n < 2 {
        return Err(ClusterError::TooFewModels { min: 2, got: n });
    }
    let ids: Vec<String> = activations.iter().map(|a| a.model_id().to_string()).collect();
    let mut values = vec![0.0; n * n];
    let mut evals = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = similarity::distance(&activations[i], &activations[j]).map_err(|source| {
                ClusterError::Similarity {
                    a: ids[i].clone(),
                    b: ids[j].clone(),
                    source,
                }
            })?;
            evals += 1;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok((DistanceMatrix::new(ids, values)?, evals))
}

/// Agglomerative average-linkage clustering cut at distance height `1 − t`.
///
/// Merging continues while the smallest average inter-cluster distance is at
/// most the cut height; equal-height merges take the pair with the
/// lexicographically smallest id pair first.
pub fn cluster(dist: &DistanceMatrix, t: f64) -> Result<ClusterSet, ClusterError> {
    if !(0.0..=1.0).contains(&t) || !t.is_finite() {
        return Err(ClusterError::InvalidThreshold { t });
    }
    let cut = 1.0 - t;
    let n = dist.len();
    let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    loop {
        if groups.len() < 2 {
            break;
        }
        let mut best: Option<(f64, String, String, usize, usize)> = None;
        for a in 0..groups.len() {
            for b in (a + 1)..groups.len() {
                let d = average_distance(dist, &groups[a], &groups[b]);
                let key_a = smallest_id(dist, &groups[a]);
                let key_b = smallest_id(dist, &groups[b]);
                let (lo, hi) = if key_a <= key_b {
                    (key_a, key_b)
                } else {
                    (key_b, key_a)
                };
                let better = match &best {
                    None => true,
                    Some((bd, blo, bhi, _, _)) => {
                        d < *bd || (d == *bd && (lo.as_str(), hi.as_str()) < (blo.as_str(), bhi.as_str()))
                    }
                };
                if better {
                    best = Some((d, lo, hi, a, b));
                }
            }
        }
        let (d, _, _, a, b) = best.expect("at least one pair");
        if d > cut {
            break;
        }
        let merged = groups.swap_remove(b);
        groups[a].extend(merged);
        // swap_remove may have moved an unrelated group into slot b; the next
        // sweep recomputes all pairs, so no bookkeeping is needed.
    }

    let mut clusters: Vec<Vec<String>> = groups
        .into_iter()
        .map(|g| {
            let mut ids: Vec<String> = g.iter().map(|&i| dist.ids()[i].clone()).collect();
            ids.sort();
            ids
        })
        .collect();
    clusters.sort_by(|a, b| a[0].cmp(&b[0]));

    let medoids = clusters
        .iter()
        .map(|members| medoid(members, dist))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ClusterSet {
        clusters,
        medoids,
        threshold: t,
    })
}

fn average_distance(dist: &DistanceMatrix, a: &[usize], b: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &i in a {
        for &j in b {
            sum += dist.get(i, j);
        }
    }
    sum / (a.len() * b.len()) as f64
}

fn smallest_id(dist: &DistanceMatrix, group: &[usize]) -> String {
    group
        .iter()
        .map(|&i| dist.ids()[i].as_str())
        .min()
        .expect("non-empty group")
        .to_string()
}

/// The member minimizing the summed distance to all other members; ties go to
/// the lexicographically smallest id.
pub fn medoid(members: &[String], dist: &DistanceMatrix) -> Result<String, ClusterError> {
    if members.is_empty() {
        return Err(ClusterError::TooFewModels { min: 1, got: 0 });
    }
    let mut best: Option<(f64, &String)> = None;
    for a in members {
        let mut sum = 0.0;
        for b in members {
            sum += dist.get_by_id(a, b)?;
        }
        let better = match &best {
            None => true,
            Some((bs, bid)) => sum < *bs || (sum == *bs && a < *bid),
        };
        if better {
            best = Some((sum, a));
        }
    }
    Ok(best.expect("non-empty members").1.clone())
}

/// Two-step candidate clustering over activation matrices.
///
/// Clusters VEs at `t_ve`; for each VE cluster, fetches LLM activations
/// conditioned on its medoid, clusters them at `t_llm`, and emits the
/// Cartesian products as candidate clusters. Cluster sizes always sum to
/// `|VE zoo| × |LLM zoo|`.
pub fn candidate_clusters(
    ve_activations: &[ActivationMatrix],
    llm_source: &dyn LlmActivationSource,
    t_ve: f64,
    t_llm: f64,
) -> Result<Vec<CandidateCluster>, ClusterError> {
    let (ve_dist, _) = if ve_activations.len() >= 2 {
        pairwise_distance_matrix(ve_activations)?
    } else if ve_activations.len() == 1 {
        (
            DistanceMatrix::new(vec![ve_activations[0].model_id().to_string()], vec![0.0])?,
            0,
        )
    } else {
        return Err(ClusterError::TooFewModels { min: 1, got: 0 });
    };
    candidate_clusters_from_distances(
        &ve_dist,
        |ve_medoid| {
            let acts = llm_source.llm_activations(ve_medoid)?;
            if acts.len() == 1 {
                Ok(DistanceMatrix::new(
                    vec![acts[0].model_id().to_string()],
                    vec![0.0],
                )?)
            } else {
                Ok(pairwise_distance_matrix(&acts)?.0)
            }
        },
        t_ve,
        t_llm,
    )
}

/// Two-step candidate clustering over precomputed distance matrices.
pub fn candidate_clusters_from_distances<F>(
    ve_dist: &DistanceMatrix,
    mut llm_dist_for: F,
    t_ve: f64,
    t_llm: f64,
) -> Result<Vec<CandidateCluster>, ClusterError>
where
    F: FnMut(&str) -> Result<DistanceMatrix, ClusterError>,
{
    let ve_clusters = cluster(ve_dist, t_ve)?;
    let mut out = Vec::new();
    for (ve_members, ve_medoid) in ve_clusters.clusters.iter().zip(&ve_clusters.medoids) {
        let llm_dist = llm_dist_for(ve_medoid)?;
        let llm_clusters = cluster(&llm_dist, t_llm)?;
        for (llm_members, llm_medoid) in llm_clusters.clusters.iter().zip(&llm_clusters.medoids) {
            let mut members = Vec::with_capacity(ve_members.len() * llm_members.len());
            for ve in ve_members {
                for llm in llm_members {
                    members.push(Candidate::new(ve.clone(), llm.clone()));
                }
            }
            out.push(CandidateCluster {
                members,
                representative: Candidate::new(ve_medoid.clone(), llm_medoid.clone()),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    /// 4 models, two planted groups: within 0.1, across 0.6.
    fn block_matrix() -> DistanceMatrix {
        let names = ids(&["A", "B", "C", "D"]);
        let mut v = vec![0.0; 16];
        let d = |v: &mut Vec<f64>, i: usize, j: usize, x: f64| {
            v[i * 4 + j] = x;
            v[j * 4 + i] = x;
        };
        d(&mut v, 0, 1, 0.1);
        d(&mut v, 2, 3, 0.1);
        d(&mut v, 0, 2, 0.6);
        d(&mut v, 0, 3, 0.6);
        d(&mut v, 1, 2, 0.6);
        d(&mut v, 1, 3, 0.6);
        DistanceMatrix::new(names, v).unwrap()
    }

    fn random_activation(id: &str, n: usize, d: usize, rng: &mut StdRng) -> ActivationMatrix {
        let arr = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        ActivationMatrix::new(id, arr).unwrap()
    }

    #[test]
    fn pairwise_matrix_has_zero_diagonal_and_symmetry() {
        let mut rng = StdRng::seed_from_u64(5);
        let acts: Vec<_> = (0..4)
            .map(|i| random_activation(&format!("m{i}"), 16, 4, &mut rng))
            .collect();
        let (m, evals) = pairwise_distance_matrix(&acts).unwrap();
        assert_eq!(evals, 6);
        for i in 0..4 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..4 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    #[test]
    fn pairwise_matrix_identical_models_have_zero_distance() {
        let mut rng = StdRng::seed_from_u64(9);
        let a = random_activation("a", 12, 3, &mut rng);
        let mut b = a.clone();
        b = ActivationMatrix::new("b", b.values().clone()).unwrap();
        let (m, _) = pairwise_distance_matrix(&[a, b]).unwrap();
        assert!(m.get(0, 1).abs() < 1e-9);
    }

    #[test]
    fn pairwise_matrix_recovers_planted_groups() {
        let mut rng = StdRng::seed_from_u64(13);
        let base1 = Array2::from_shape_fn((32, 8), |_| rng.gen_range(-1.0..1.0));
        let base2 = Array2::from_shape_fn((32, 8), |_| rng.gen_range(-1.0..1.0));
        let noisy = |base: &Array2<f64>, id: &str, rng: &mut StdRng| {
            let noise = Array2::from_shape_fn((32, 8), |_| rng.gen_range(-0.05..0.05));
            ActivationMatrix::new(id, base + &noise).unwrap()
        };
        let acts = vec![
            noisy(&base1, "A", &mut rng),
            noisy(&base1, "B", &mut rng),
            noisy(&base2, "C", &mut rng),
            noisy(&base2, "D", &mut rng),
        ];
        let (m, _) = pairwise_distance_matrix(&acts).unwrap();
        assert!(m.get_by_id("A", "B").unwrap() < 0.2);
        assert!(m.get_by_id("C", "D").unwrap() < 0.2);
        assert!(m.get_by_id("A", "C").unwrap() > 0.4);
        assert!(m.get_by_id("B", "D").unwrap() > 0.4);
    }

    #[test]
    fn cluster_cuts_block_matrix_into_planted_groups() {
        let m = block_matrix();
        let cs = cluster(&m, 0.7).unwrap();
        assert_eq!(cs.clusters, vec![ids(&["A", "B"]), ids(&["C", "D"])]);
        assert_eq!(cs.medoids, ids(&["A", "C"]));
    }

    #[test]
    fn cluster_threshold_zero_is_one_cluster() {
        let m = block_matrix();
        let cs = cluster(&m, 0.0).unwrap();
        assert_eq!(cs.clusters, vec![ids(&["A", "B", "C", "D"])]);
    }

    #[test]
    fn cluster_threshold_one_is_all_singletons() {
        let m = block_matrix();
        let cs = cluster(&m, 1.0).unwrap();
        assert_eq!(cs.clusters.len(), 4);
        assert!(cs.clusters.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn cluster_count_monotone_in_threshold() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..10 {
            let n = rng.gen_range(3..7);
            let mut v = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let d: f64 = rng.gen_range(0.01..1.0);
                    v[i * n + j] = d;
                    v[j * n + i] = d;
                }
            }
            let names: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
            let m = DistanceMatrix::new(names, v).unwrap();
            let mut prev = 0;
            for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let k = cluster(&m, t).unwrap().clusters.len();
                assert!(k >= prev, "cluster count decreased at t={t}");
                prev = k;
            }
        }
    }

    #[test]
    fn cluster_rejects_bad_threshold() {
        let m = block_matrix();
        assert!(matches!(
            cluster(&m, 1.5),
            Err(ClusterError::InvalidThreshold { .. })
        ));
    }

    #[test]
    fn medoid_minimizes_summed_distance() {
        let names = ids(&["A", "B", "C"]);
        let mut v = vec![0.0; 9];
        let d = |v: &mut Vec<f64>, i: usize, j: usize, x: f64| {
            v[i * 3 + j] = x;
            v[j * 3 + i] = x;
        };
        d(&mut v, 0, 1, 0.1);
        d(&mut v, 0, 2, 0.2);
        d(&mut v, 1, 2, 0.4);
        let m = DistanceMatrix::new(names.clone(), v).unwrap();
        assert_eq!(medoid(&names, &m).unwrap(), "A");
    }

    #[test]
    fn medoid_singleton_and_pair_ties() {
        let m = block_matrix();
        assert_eq!(medoid(&ids(&["C"]), &m).unwrap(), "C");
        // Two members always tie; lexicographically smaller id wins.
        assert_eq!(medoid(&ids(&["C", "D"]), &m).unwrap(), "C");
        assert_eq!(medoid(&ids(&["D", "C"]), &m).unwrap(), "C");
    }

    #[test]
    fn medoid_unknown_id_is_an_error() {
        let m = block_matrix();
        assert!(matches!(
            medoid(&ids(&["A", "Z"]), &m),
            Err(ClusterError::UnknownId { .. })
        ));
    }

    #[test]
    fn candidate_clusters_single_pair() {
        let mut rng = StdRng::seed_from_u64(33);
        let ve = vec![random_activation("v0", 16, 4, &mut rng)];
        let llm_act = random_activation("l0", 16, 4, &mut rng);
        let source = move |_medoid: &str| Ok(vec![llm_act.clone()]);
        let out = candidate_clusters(&ve, &source, 0.7, 0.8).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].members, vec![Candidate::new("v0", "l0")]);
        assert_eq!(out[0].representative, Candidate::new("v0", "l0"));
    }

    #[test]
    fn candidate_clusters_conditioned_structure() {
        // 4 VEs in two groups; conditioning on the first group's medoid
        // separates the two LLMs, conditioning on the second does not.
        let ve_names = ids(&["v1", "v2", "v3", "v4"]);
        let mut v = vec![0.0; 16];
        let d = |v: &mut Vec<f64>, i: usize, j: usize, x: f64| {
            v[i * 4 + j] = x;
            v[j * 4 + i] = x;
        };
        d(&mut v, 0, 1, 0.05);
        d(&mut v, 2, 3, 0.05);
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            d(&mut v, i, j, 0.7);
        }
        let ve_dist = DistanceMatrix::new(ve_names, v).unwrap();

        let llm_dist_for = |medoid: &str| {
            let names = ids(&["l1", "l2"]);
            let sep = if medoid == "v1" { 0.6 } else { 0.05 };
            DistanceMatrix::new(names, vec![0.0, sep, sep, 0.0])
        };
        let out = candidate_clusters_from_distances(&ve_dist, llm_dist_for, 0.7, 0.8).unwrap();
        let sizes: Vec<usize> = out.iter().map(|c| c.members.len()).collect();
        assert_eq!(sizes, vec![2, 2, 4]);
        let total: usize = sizes.iter().sum();
        assert_eq!(total, 4 * 2);
        for c in &out {
            assert!(c.members.contains(&c.representative));
        }
    }

    #[test]
    fn candidate_clusters_partition_the_product() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..5 {
            let n_ve = rng.gen_range(2..5);
            let n_llm = rng.gen_range(2..5);
            let ve: Vec<_> = (0..n_ve)
                .map(|i| random_activation(&format!("v{i}"), 16, 4, &mut rng))
                .collect();
            let llm_mats: Vec<_> = (0..n_llm)
                .map(|i| random_activation(&format!("l{i}"), 16, 4, &mut rng))
                .collect();
            let source = move |_medoid: &str| Ok(llm_mats.clone());
            let out = candidate_clusters(&ve, &source, 0.7, 0.8).unwrap();
            let mut all: Vec<Candidate> = out.iter().flat_map(|c| c.members.clone()).collect();
            assert_eq!(all.len(), n_ve * n_llm);
            all.sort();
            all.dedup();
            assert_eq!(all.len(), n_ve * n_llm, "members overlap");
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let mut rng = StdRng::seed_from_u64(55);
        let acts: Vec<_> = (0..5)
            .map(|i| random_activation(&format!("m{i}"), 20, 6, &mut rng))
            .collect();
        let (m, _) = pairwise_distance_matrix(&acts).unwrap();
        let a = cluster(&m, 0.6).unwrap();
        let b = cluster(&m, 0.6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distance_matrix_json_round_trip() {
        let m = block_matrix();
        let json = serde_json::to_string(&m).unwrap();
        let back: DistanceMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back.ids(), m.ids());
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(back.get(i, j), m.get(i, j));
            }
        }
    }

    #[test]
    fn distance_matrix_rejects_asymmetry() {
        let r = DistanceMatrix::new(ids(&["A", "B"]), vec![0.0, 0.3, 0.4, 0.0]);
        assert!(matches!(r, Err(ClusterError::InvalidMatrix { .. })));
    }
}

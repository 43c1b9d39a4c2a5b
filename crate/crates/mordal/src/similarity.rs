//! Linear-kernel CKA and HSIC between activation matrices.
//!
//! Representation similarity between two models is measured on the same task
//! samples: each model contributes an activation matrix (rows = samples,
//! columns = features), activations are turned into linear Gram matrices, and
//! similarity is the ratio of the cross HSIC to the geometric mean of the
//! self HSICs. Two estimators are provided:
//!
//! * [`hsic`] — the biased full-data form `Tr(KHLH)` with the centering
//!   matrix `H = I - (1/n)11ᵀ`, used by [`cka`].
//! * [`hsic_unbiased`] — the unbiased estimator that remains valid when
//!   accumulated over minibatches, used by [`minibatch_cka`]. It requires at
//!   least 4 samples per batch.
//!
//! All functions are pure; matrices are never mutated.

use ndarray::{Array2, Axis};
use thiserror::Error;

/// Denominators below this are treated as degenerate (constant activations).
pub const DEGENERACY_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {context}: {left} vs {right}")]
    DimensionMismatch {
        context: String,
        left: usize,
        right: usize,
    },
    #[error("non-finite entry in activation matrix `{model_id}`")]
    NonFinite { model_id: String },
    #[error("activation matrix `{model_id}` has {n_samples} samples; at least {min} required")]
    TooFewSamples {
        model_id: String,
        n_samples: usize,
        min: usize,
    },
    #[error("kernel matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("degenerate input: constant activations in `{model_id}` carry no geometry")]
    DegenerateInput { model_id: String },
    #[error("batch {index} has {n_samples} samples; the unbiased estimator requires at least 4")]
    BatchTooSmall { index: usize, n_samples: usize },
    #[error("batch sequences have different lengths: {left} vs {right}")]
    BatchCountMismatch { left: usize, right: usize },
}

/// Per-model activations of the target-task samples.
///
/// Rows of matrices being compared must correspond to the same samples in the
/// same order; that contract is the caller's.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    model_id: String,
    values: Array2<f64>,
}

impl ActivationMatrix {
    /// Validates shape (≥ 2 samples, ≥ 1 feature) and finiteness.
    pub fn new(model_id: impl Into<String>, values: Array2<f64>) -> Result<Self, SimilarityError> {
        let model_id = model_id.into();
        if values.nrows() < 2 {
            return Err(SimilarityError::TooFewSamples {
                model_id,
                n_samples: values.nrows(),
                min: 2,
            });
        }
        if values.ncols() == 0 {
            return Err(SimilarityError::DimensionMismatch {
                context: format!("activation matrix `{model_id}` feature count"),
                left: values.ncols(),
                right: 1,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimilarityError::NonFinite { model_id });
        }
        Ok(Self { model_id, values })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Splits the sample rows into consecutive batches of `batch_size`
    /// (the last batch keeps the remainder).
    pub fn split_batches(&self, batch_size: usize) -> Vec<ActivationMatrix> {
        assert!(batch_size > 0, "batch_size must be positive");
        let n = self.n_samples();
        let mut out = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + batch_size).min(n);
            let part = self.values.slice(ndarray::s![start..end, ..]).to_owned();
            out.push(ActivationMatrix {
                model_id: self.model_id.clone(),
                values: part,
            });
            start = end;
        }
        out
    }
}

/// A dense symmetric kernel (Gram) matrix.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    values: Array2<f64>,
}

impl KernelMatrix {
    /// Wraps a precomputed kernel, checking squareness and symmetry
    /// (1e-9 relative tolerance).
    pub fn new(values: Array2<f64>) -> Result<Self, SimilarityError> {
        let n = values.nrows();
        if n != values.ncols() {
            return Err(SimilarityError::DimensionMismatch {
                context: "kernel matrix must be square".into(),
                left: n,
                right: values.ncols(),
            });
        }
        if n < 2 {
            return Err(SimilarityError::TooFewSamples {
                model_id: "<kernel>".into(),
                n_samples: n,
                min: 2,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimilarityError::NonFinite {
                model_id: "<kernel>".into(),
            });
        }
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (values[(i, j)] - values[(j, i)]).abs() > 1e-9 * scale {
                    return Err(SimilarityError::NotSymmetric);
                }
            }
        }
        Ok(Self { values })
    }

    /// The linear kernel `K = X·Xᵀ` of an activation matrix.
    pub fn linear(x: &ActivationMatrix) -> Self {
        let v = x.values();
        Self {
            values: v.dot(&v.t()),
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Biased HSIC: `Tr(K·H·L·H)` with `H = I − (1/n)·1·1ᵀ`.
///
/// Symmetric in its arguments; non-negative (up to rounding) when `K = L`.
pub fn hsic(k: &KernelMatrix, l: &KernelMatrix) -> Result<f64, SimilarityError> {
    if k.n() != l.n() {
        return Err(SimilarityError::DimensionMismatch {
            context: "hsic kernel sizes".into(),
            left: k.n(),
            right: l.n(),
        });
    }
    let centered = double_center(l.values());
    // Tr(K·C) with C = HLH; C is symmetric so the transpose is immaterial.
    let mut acc = KahanSum::default();
    for (kv, cv) in k.values().iter().zip(centered.iter()) {
        acc.add(kv * cv);
    }
    Ok(acc.value())
}

/// Unbiased HSIC estimator over a single batch; requires `n ≥ 4`.
///
/// Unlike [`hsic`], per-batch estimates may be summed across minibatches and
/// remain an unbiased estimate of the population value.
pub fn hsic_unbiased(k: &KernelMatrix, l: &KernelMatrix) -> Result<f64, SimilarityError> {
    let n = k.n();
    if n != l.n() {
        return Err(SimilarityError::DimensionMismatch {
            context: "hsic kernel sizes".into(),
            left: n,
            right: l.n(),
        });
    }
    if n < 4 {
        return Err(SimilarityError::BatchTooSmall {
            index: 0,
            n_samples: n,
        });
    }
    let nf = n as f64;
    let kv = k.values();
    let lv = l.values();

    let mut tr = KahanSum::default();
    let mut sum_k = KahanSum::default();
    let mut sum_l = KahanSum::default();
    let mut row_dot = KahanSum::default();
    for i in 0..n {
        let mut row_k = KahanSum::default();
        let mut row_l = KahanSum::default();
        for j in 0..n {
            if i == j {
                continue;
            }
            let kij = kv[(i, j)];
            let lij = lv[(i, j)];
            tr.add(kij * lij);
            row_k.add(kij);
            row_l.add(lij);
        }
        sum_k.add(row_k.value());
        sum_l.add(row_l.value());
        row_dot.add(row_k.value() * row_l.value());
    }
    let term2 = sum_k.value() * sum_l.value() / ((nf - 1.0) * (nf - 2.0));
    let term3 = 2.0 / (nf - 2.0) * row_dot.value();
    Ok((tr.value() + term2 - term3) / (nf * (nf - 3.0)))
}

/// Linear-kernel CKA between two activation matrices, clamped to `[0, 1]`.
pub fn cka(x: &ActivationMatrix, y: &ActivationMatrix) -> Result<f64, SimilarityError> {
    if x.n_samples() != y.n_samples() {
        return Err(SimilarityError::DimensionMismatch {
            context: format!("sample counts of `{}` and `{}`", x.model_id(), y.model_id()),
            left: x.n_samples(),
            right: y.n_samples(),
        });
    }
    let k = KernelMatrix::linear(x);
    let l = KernelMatrix::linear(y);
    let kk = hsic(&k, &k)?;
    let ll = hsic(&l, &l)?;
    if kk < DEGENERACY_EPS {
        return Err(SimilarityError::DegenerateInput {
            model_id: x.model_id().to_string(),
        });
    }
    if ll < DEGENERACY_EPS {
        return Err(SimilarityError::DegenerateInput {
            model_id: y.model_id().to_string(),
        });
    }
    let kl = hsic(&k, &l)?;
    Ok((kl / (kk * ll).sqrt()).clamp(0.0, 1.0))
}

/// Minibatch CKA: accumulates unbiased HSIC estimates of (K,L), (K,K), (L,L)
/// across paired batches and returns the combined ratio, clamped to `[0, 1]`.
///
/// With a single batch holding the full dataset this is exactly the full-data
/// unbiased-HSIC CKA. Batches are processed in the given order with
/// compensated summation, so the result is deterministic.
pub fn minibatch_cka(
    batches_x: &[ActivationMatrix],
    batches_y: &[ActivationMatrix],
) -> Result<f64, SimilarityError> {
    if batches_x.len() != batches_y.len() {
        return Err(SimilarityError::BatchCountMismatch {
            left: batches_x.len(),
            right: batches_y.len(),
        });
    }
    if batches_x.is_empty() {
        return Err(SimilarityError::BatchCountMismatch { left: 0, right: 0 });
    }
    let mut cross = KahanSum::default();
    let mut self_x = KahanSum::default();
    let mut self_y = KahanSum::default();
    for (index, (bx, by)) in batches_x.iter().zip(batches_y.iter()).enumerate() {
        if bx.n_samples() != by.n_samples() {
            return Err(SimilarityError::DimensionMismatch {
                context: format!("sample counts of paired batch {index}"),
                left: bx.n_samples(),
                right: by.n_samples(),
            });
        }
        if bx.n_samples() < 4 {
            return Err(SimilarityError::BatchTooSmall {
                index,
                n_samples: bx.n_samples(),
            });
        }
        let k = KernelMatrix::linear(bx);
        let l = KernelMatrix::linear(by);
        cross.add(hsic_unbiased(&k, &l)?);
        self_x.add(hsic_unbiased(&k, &k)?);
        self_y.add(hsic_unbiased(&l, &l)?);
    }
    if self_x.value() < DEGENERACY_EPS {
        return Err(SimilarityError::DegenerateInput {
            model_id: batches_x[0].model_id().to_string(),
        });
    }
    if self_y.value() < DEGENERACY_EPS {
        return Err(SimilarityError::DegenerateInput {
            model_id: batches_y[0].model_id().to_string(),
        });
    }
    Ok((cross.value() / (self_x.value() * self_y.value()).sqrt()).clamp(0.0, 1.0))
}

/// Representation distance `1 − CKA(X, Y)`, in `[0, 1]`.
pub fn distance(x: &ActivationMatrix, y: &ActivationMatrix) -> Result<f64, SimilarityError> {
    Ok(1.0 - cka(x, y)?)
}

/// `HLH` computed as double centering: subtract row and column means, add the
/// grand mean.
fn double_center(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows() as f64;
    let row_means = m.mean_axis(Axis(1)).expect("non-empty matrix");
    let col_means = m.mean_axis(Axis(0)).expect("non-empty matrix");
    let grand = row_means.sum() / n;
    let mut out = m.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = *v - row_means[i] - col_means[j] + grand;
    }
    out
}

/// Kahan compensated summation.
#[derive(Debug, Default, Clone, Copy)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

//! Flat parameter vectors and the server-side vector algebra.
//!
//! Every model, cluster center and aggregate handled by the server is a
//! [`ParamVector`]: a flat `f64` buffer plus the [`ShapeManifest`] that says
//! how the buffer splits back into named tensors. Tensors are laid out in
//! manifest order, each one row-major.

use std::borrow::Borrow;
use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Norm below which a vector is treated as degenerate for cosine similarity.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("vectors have different shape manifests")]
    ManifestMismatch,
    #[error("coefficient count {actual} does not match manifest total {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("coefficient {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("vector norm {norm:e} is below the degeneracy threshold")]
    DegenerateVector { norm: f64 },
    #[error("{vectors} vectors but {weights} weights")]
    WeightCountMismatch { vectors: usize, weights: usize },
    #[error("at least one vector is required")]
    Empty,
    #[error("tensor name {0:?} appears more than once in the manifest")]
    DuplicateTensor(String),
    #[error("tensor {0:?} has a zero or missing dimension")]
    InvalidDimensions(String),
}

/// One named tensor in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of named tensors fixing the flattening order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeManifest {
    entries: Vec<TensorShape>,
    total: usize,
}

impl ShapeManifest {
    pub fn new(entries: Vec<TensorShape>) -> Result<Self, ParamError> {
        let mut seen = HashSet::new();
        for entry in &entries {
            if !seen.insert(entry.name.as_str()) {
                return Err(ParamError::DuplicateTensor(entry.name.clone()));
            }
            if entry.dims.is_empty() || entry.dims.contains(&0) {
                return Err(ParamError::InvalidDimensions(entry.name.clone()));
            }
        }
        let total = entries.iter().map(TensorShape::len).sum();
        Ok(Self { entries, total })
    }

    /// Single anonymous tensor of length `len`; handy for plain vectors.
    pub fn flat(len: usize) -> Result<Self, ParamError> {
        Self::new(vec![TensorShape {
            name: "flat".to_owned(),
            dims: vec![len],
        }])
    }

    pub fn entries(&self) -> &[TensorShape] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    /// Offset of each entry inside the flat buffer.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.entries
            .iter()
            .map(|e| {
                let start = acc;
                acc += e.len();
                start
            })
            .collect()
    }
}

/// Flat real-valued parameter vector with a shape manifest.
///
/// The manifest is shared behind an [`Arc`] because thousands of vectors with
/// the same architecture are alive at once during a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    coefficients: Vec<f64>,
    manifest: Arc<ShapeManifest>,
}

impl ParamVector {
    pub fn new(coefficients: Vec<f64>, manifest: Arc<ShapeManifest>) -> Result<Self, ParamError> {
        if coefficients.len() != manifest.total_len() {
            return Err(ParamError::LengthMismatch {
                expected: manifest.total_len(),
                actual: coefficients.len(),
            });
        }
        if let Some((index, &value)) = coefficients.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ParamError::NonFinite { index, value });
        }
        Ok(Self { coefficients, manifest })
    }

    /// Convenience constructor with a single flat tensor.
    pub fn from_flat(coefficients: Vec<f64>) -> Result<Self, ParamError> {
        let manifest = Arc::new(ShapeManifest::flat(coefficients.len())?);
        Self::new(coefficients, manifest)
    }

    pub fn zeros(manifest: Arc<ShapeManifest>) -> Self {
        Self {
            coefficients: vec![0.0; manifest.total_len()],
            manifest,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coefficients
    }

    pub fn manifest(&self) -> &Arc<ShapeManifest> {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn same_manifest(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.manifest, &other.manifest) || self.manifest == other.manifest
    }

    fn check_manifest(&self, other: &ParamVector) -> Result<(), ParamError> {
        if self.same_manifest(other) {
            Ok(())
        } else {
            Err(ParamError::ManifestMismatch)
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64, ParamError> {
        self.check_manifest(other)?;
        Ok(dot(&self.coefficients, &other.coefficients))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.coefficients, &self.coefficients).sqrt()
    }

    /// Squared Euclidean distance `Σ (a_i − b_i)²`.
    pub fn euclidean_distance_sq(&self, other: &ParamVector) -> Result<f64, ParamError> {
        self.check_manifest(other)?;
        Ok(distance_sq(&self.coefficients, &other.coefficients))
    }

    /// Cosine similarity, clamped to `[-1, 1]`.
    ///
    /// Fails with [`ParamError::DegenerateVector`] when either norm is below
    /// [`DEGENERATE_NORM`]; callers pick their own fallback.
    pub fn cosine_similarity(&self, other: &ParamVector) -> Result<f64, ParamError> {
        self.check_manifest(other)?;
        let aa = dot(&self.coefficients, &self.coefficients);
        let bb = dot(&other.coefficients, &other.coefficients);
        for sq in [aa, bb] {
            let norm = sq.sqrt();
            if norm < DEGENERATE_NORM {
                return Err(ParamError::DegenerateVector { norm });
            }
        }
        let ab = dot(&self.coefficients, &other.coefficients);
        // sqrt(aa * bb) rather than sqrt(aa) * sqrt(bb): identical vectors give exactly 1.
        Ok((ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
    }

    /// Element-wise `Σ weights_i · vectors_i`.
    pub fn weighted_sum<V: Borrow<ParamVector>>(vectors: &[V], weights: &[f64]) -> Result<ParamVector, ParamError> {
        let first = vectors.first().ok_or(ParamError::Empty)?.borrow();
        if vectors.len() != weights.len() {
            return Err(ParamError::WeightCountMismatch {
                vectors: vectors.len(),
                weights: weights.len(),
            });
        }
        let mut out = vec![0.0; first.len()];
        for (v, &w) in vectors.iter().zip(weights) {
            let v = v.borrow();
            first.check_manifest(v)?;
            for (o, x) in out.iter_mut().zip(&v.coefficients) {
                *o += w * x;
            }
        }
        ParamVector::new(out, Arc::clone(&first.manifest))
    }

    /// Unweighted arithmetic mean.
    ///
    /// Uses a running mean, so the mean of identical vectors is returned bit
    /// for bit and every coordinate stays inside the inputs' range.
    pub fn mean<V: Borrow<ParamVector>>(vectors: &[V]) -> Result<ParamVector, ParamError> {
        let first = vectors.first().ok_or(ParamError::Empty)?.borrow();
        let mut acc = first.coefficients.clone();
        for (i, v) in vectors.iter().enumerate().skip(1) {
            let v = v.borrow();
            first.check_manifest(v)?;
            let inv = 1.0 / (i + 1) as f64;
            for (a, x) in acc.iter_mut().zip(&v.coefficients) {
                *a += (x - *a) * inv;
            }
        }
        ParamVector::new(acc, Arc::clone(&first.manifest))
    }

    pub fn scale(&self, factor: f64) -> Result<ParamVector, ParamError> {
        let coefficients = self.coefficients.iter().map(|x| x * factor).collect();
        ParamVector::new(coefficients, Arc::clone(&self.manifest))
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64, ParamError> {
        self.check_manifest(other)?;
        Ok(self
            .coefficients
            .iter()
            .zip(&other.coefficients)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

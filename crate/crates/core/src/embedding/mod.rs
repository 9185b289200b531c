//! Feature vectors, L2 normalization and cosine similarity.
//!
//! Vectors may be stored as `f32` or `f64`; similarities are always
//! accumulated in `f64` with a fixed left-to-right summation order so that
//! `cosine_sim(a, b)` and `cosine_sim(b, a)` agree to the last bit.

pub mod format;

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::scalar::{dot_f64, l2_norm, Scalar};

/// A finite, nonempty vector of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T>(Vec<T>);

impl<T: Scalar> FeatureVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParams("feature vector must have D >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

/// Scales `v` to unit L2 norm.
///
/// A vector already within [`Scalar::unit_tolerance`] of unit norm is
/// returned unchanged, which makes the operation idempotent bit for bit.
pub fn normalize<T: Scalar>(v: &FeatureVector<T>) -> Result<FeatureVector<T>> {
    normalize_slice(v.as_slice()).map(FeatureVector)
}

pub(crate) fn normalize_slice<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let norm = l2_norm(v);
    if !norm.is_finite() {
        return Err(Error::NonFinite);
    }
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    if (norm - 1.0).abs() <= T::unit_tolerance().to_f64_lossless() {
        return Ok(v.to_vec());
    }
    Ok(v
        .iter()
        .map(|x| T::from_f64_lossy(x.to_f64_lossless() / norm))
        .collect())
}

/// An id plus a unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord<T> {
    pub id: u64,
    vector: FeatureVector<T>,
}

impl<T: Scalar> EmbeddingRecord<T> {
    /// Builds a record, normalizing `values`. Zero vectors are rejected.
    pub fn new(id: u64, values: Vec<T>) -> Result<Self> {
        let v = FeatureVector::new(values)?;
        Ok(Self {
            id,
            vector: normalize(&v)?,
        })
    }

    pub fn vector(&self) -> &FeatureVector<T> {
        &self.vector
    }

    pub fn values(&self) -> &[T] {
        self.vector.as_slice()
    }

    pub fn dim(&self) -> usize {
        self.vector.dim()
    }
}

/// Cosine similarity of two normalized records, clamped to `[-1, 1]`.
pub fn cosine_sim<T: Scalar>(a: &EmbeddingRecord<T>, b: &EmbeddingRecord<T>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(unit_dot(a.values(), b.values()))
}

#[inline]
pub(crate) fn unit_dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    // A unit vector against itself is exactly 1; the rounded sum can land an ulp short.
    if a == b {
        return 1.0;
    }
    dot_f64(a, b).clamp(-1.0, 1.0)
}

/// A set of records sharing one dimension, with unique ids and optional
/// per-record class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<T> {
    dim: usize,
    records: Vec<EmbeddingRecord<T>>,
    labels: BTreeMap<u64, Vec<u32>>,
}

impl<T: Scalar> Corpus<T> {
    pub fn new(records: Vec<EmbeddingRecord<T>>) -> Result<Self> {
        Self::with_labels(records, BTreeMap::new())
    }

    pub fn with_labels(
        records: Vec<EmbeddingRecord<T>>,
        labels: BTreeMap<u64, Vec<u32>>,
    ) -> Result<Self> {
        let dim = records.first().map(|r| r.dim()).unwrap_or(0);
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.dim(),
                });
            }
            if !seen.insert(r.id) {
                return Err(Error::DuplicateId(r.id));
            }
        }
        Ok(Self {
            dim,
            records,
            labels,
        })
    }

    /// Builds a corpus whose ids are the positions in `vectors`.
    pub fn from_vectors<I>(vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = Vec<T>>,
    {
        let records = vectors
            .into_iter()
            .enumerate()
            .map(|(i, v)| EmbeddingRecord::new(i as u64, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(records)
    }

    /// Dimension of every record; 0 for an empty corpus.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord<T>] {
        &self.records
    }

    pub fn labels(&self) -> &BTreeMap<u64, Vec<u32>> {
        &self.labels
    }

    pub fn labels_of(&self, id: u64) -> Option<&[u32]> {
        self.labels.get(&id).map(Vec::as_slice)
    }
}

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat `d`-dimensional vector of `f64` holding model iterates, gradients
/// and memory accumulators. The length is fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn zeros(dim: usize) -> Self {
        DenseVector(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        DenseVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn ensure_len(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.len(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        other.ensure_len(self.len())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DenseVector) -> Result<()> {
        other.ensure_len(self.len())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.0 {
            *v *= alpha;
        }
    }

    /// Element-wise `self + other` as a new vector.
    pub fn add(&self, other: &DenseVector) -> Result<DenseVector> {
        other.ensure_len(self.len())?;
        Ok(DenseVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Element-wise `self - other` as a new vector.
    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        other.ensure_len(self.len())?;
        Ok(DenseVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Cosine of the angle between two non-zero vectors, clamped to [-1, 1].
    pub fn cosine_similarity(&self, other: &DenseVector) -> Result<f64> {
        other.ensure_len(self.len())?;
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Undefined(
                "cosine similarity of a zero vector".into(),
            ));
        }
        Ok((dot(&self.0, &other.0) / (na * nb)).clamp(-1.0, 1.0))
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(values: Vec<f64>) -> Self {
        DenseVector(values)
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Plain sequential dot product. Summation order is fixed, so results are
/// reproducible across runs.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

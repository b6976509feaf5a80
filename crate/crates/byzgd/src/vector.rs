//! Dense `f64` vectors for model parameters, gradients, and covariates.

use std::ops::{Add, Index, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or direction in the d-dimensional model space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector {
    coords: Vec<f64>,
}

impl ModelVector {
    /// Wraps raw coordinates. Use [`ModelVector::validated`] for untrusted input.
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    /// Wraps coordinates after checking that they are non-empty and finite.
    pub fn validated(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("vector must have at least one coordinate"));
        }
        if !coords.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("vector has non-finite coordinates"));
        }
        Ok(Self { coords })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { coords: vec![0.0; dim] }
    }

    /// Standard basis vector `e_axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut coords = vec![0.0; dim];
        coords[axis] = 1.0;
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.coords.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.coords
            .iter()
            .zip(other.coords.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.coords
            .iter()
            .zip(other.coords.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            coords: self.coords.iter().map(|c| c * a).collect(),
        }
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self {
            coords: self
                .coords
                .iter()
                .zip(other.coords.iter())
                .map(|(s, o)| s + a * o)
                .collect(),
        }
    }

    /// Rescales to the requested norm. Errors on the zero vector.
    pub fn with_norm(&self, target: f64) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::invalid("cannot rescale the zero vector"));
        }
        Ok(self.scale(target / n))
    }
}

impl Index<usize> for ModelVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.coords[i]
    }
}

impl Add for &ModelVector {
    type Output = ModelVector;

    fn add(self, rhs: &ModelVector) -> ModelVector {
        debug_assert_eq!(self.dim(), rhs.dim());
        ModelVector {
            coords: self
                .coords
                .iter()
                .zip(rhs.coords.iter())
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &ModelVector {
    type Output = ModelVector;

    fn sub(self, rhs: &ModelVector) -> ModelVector {
        debug_assert_eq!(self.dim(), rhs.dim());
        ModelVector {
            coords: self
                .coords
                .iter()
                .zip(rhs.coords.iter())
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul<f64> for &ModelVector {
    type Output = ModelVector;

    fn mul(self, rhs: f64) -> ModelVector {
        self.scale(rhs)
    }
}

/// Arithmetic mean of a non-empty slice of same-dimension vectors.
///
/// Sums in slice order and divides once, so the result is bit-stable for a
/// given input order.
pub fn mean_of_vectors(vectors: &[ModelVector]) -> Result<ModelVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::invalid("mean of empty vector list"))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::invalid(format!(
                "dimension mismatch: expected {dim}, got {}",
                v.dim()
            )));
        }
        for (a, c) in acc.iter_mut().zip(v.coords.iter()) {
            *a += c;
        }
    }
    let n = vectors.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Ok(ModelVector::new(acc))
}

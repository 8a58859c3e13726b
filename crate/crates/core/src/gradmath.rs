//! Dense vector arithmetic over flat gradient vectors.
//!
//! Every reduction accumulates left to right in input order so that results are
//! bit-reproducible for a fixed input.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flat double-precision vector: a model update or a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientVec(Vec<f64>);

impl GradientVec {
    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("gradient vector"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self(values))
    }

    /// A zero vector of the given dimension.
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).fold(0.0, |acc, (a, b)| acc + a * b))
    }

    /// `self * c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| v * c).collect())
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a + c * b).collect(),
        ))
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }
}

impl From<Vec<f64>> for GradientVec {
    /// Unchecked conversion; callers that accept external input use [`GradientVec::new`].
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Index<usize> for GradientVec {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_dims(a: &GradientVec, b: &GradientVec) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

pub fn l2_norm(a: &GradientVec) -> f64 {
    a.0.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
}

/// Cosine of the angle between `a` and `b`, clamped to [-1, 1].
///
/// A zero-norm operand carries no direction and yields exactly 0.
pub fn cosine_similarity(a: &GradientVec, b: &GradientVec) -> Result<f64> {
    let dot = a.dot(b)?;
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `sum_i weights[i] * grads[i]`, accumulated in index order.
pub fn weighted_sum<G: AsRef<GradientVec>>(grads: &[G], weights: &[f64]) -> Result<GradientVec> {
    let first = grads.first().ok_or(Error::EmptyInput("weighted_sum gradients"))?;
    if grads.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "weights",
            expected: grads.len(),
            found: weights.len(),
        });
    }
    let mut acc = vec![0.0; first.as_ref().dim()];
    for (g, &w) in grads.iter().zip(weights) {
        let g = g.as_ref();
        check_dims(first.as_ref(), g)?;
        for (a, v) in acc.iter_mut().zip(&g.0) {
            *a += w * v;
        }
    }
    Ok(GradientVec(acc))
}

impl AsRef<GradientVec> for GradientVec {
    fn as_ref(&self) -> &GradientVec {
        self
    }
}

/// Result of [`rescale_to_norm`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rescaled {
    pub vec: GradientVec,
    /// Set when the input had zero norm and a positive target, so no rescale happened.
    pub degenerate: bool,
}

/// Scales `v` to have Euclidean norm `target`, keeping its direction.
pub fn rescale_to_norm(v: &GradientVec, target: f64) -> Result<Rescaled> {
    if !(target >= 0.0) || !target.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rescale target must be finite and >= 0, got {target}"
        )));
    }
    let norm = l2_norm(v);
    if norm == 0.0 {
        return Ok(Rescaled {
            vec: v.clone(),
            degenerate: target > 0.0,
        });
    }
    Ok(Rescaled {
        vec: v.scaled(target / norm),
        degenerate: false,
    })
}

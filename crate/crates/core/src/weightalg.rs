//! Parameter vectors and weight-offset algebra.
//!
//! A [`ParamSet`] is a flat vector plus a manifest naming each tensor. Offsets
//! between a fine-tuned model and its base live in the same space, so merging
//! and composing negative-branch weights is plain vector arithmetic gated by
//! manifest equality.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numcore::tensor::{check_finite, dot};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<S> {
    manifest: Vec<TensorSpec>,
    values: Vec<S>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new(manifest: Vec<TensorSpec>, values: Vec<S>) -> Result<Self> {
        let total: usize = manifest.iter().map(TensorSpec::numel).sum();
        if total != values.len() {
            return Err(LabError::Shape {
                context: "parameter values",
                expected: vec![total],
                actual: vec![values.len()],
            });
        }
        check_finite("parameter values", &values)?;
        Ok(Self { manifest, values })
    }

    pub fn zeros(manifest: Vec<TensorSpec>) -> Self {
        let total = manifest.iter().map(TensorSpec::numel).sum();
        Self {
            manifest,
            values: vec![S::zero(); total],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            manifest: self.manifest.clone(),
            values: vec![S::zero(); self.values.len()],
        }
    }

    /// Same manifest, new values. Callers guarantee the length.
    pub(crate) fn with_values(&self, values: Vec<S>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            manifest: self.manifest.clone(),
            values,
        }
    }

    pub fn manifest(&self) -> &[TensorSpec] {
        &self.manifest
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat range occupied by the named tensor.
    pub fn range_of(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for spec in &self.manifest {
            let end = start + spec.numel();
            if spec.name == name {
                return Some(start..end);
            }
            start = end;
        }
        None
    }

    pub fn tensor(&self, name: &str) -> Option<&[S]> {
        self.range_of(name).map(|r| &self.values[r])
    }

    pub fn ensure_same_manifest(&self, other: &Self) -> Result<()> {
        let n = self.manifest.len().max(other.manifest.len());
        for i in 0..n {
            let (a, b) = (self.manifest.get(i), other.manifest.get(i));
            if a != b {
                return Err(LabError::config(format!(
                    "manifest mismatch at entry {i}: {} vs {}",
                    describe(a),
                    describe(b)
                )));
            }
        }
        Ok(())
    }

    fn combine(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.ensure_same_manifest(other)?;
        let values: Vec<S> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        check_finite("parameter arithmetic", &values)?;
        Ok(self.with_values(values))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a - b)
    }

    pub fn scale(&self, k: S) -> Result<Self> {
        let values: Vec<S> = self.values.iter().map(|&a| a * k).collect();
        check_finite("parameter scale", &values)?;
        Ok(self.with_values(values))
    }

    /// `self + k * other`.
    pub fn axpy(&self, k: S, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a + k * b)
    }

    pub fn dot(&self, other: &Self) -> Result<S> {
        self.ensure_same_manifest(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm(&self) -> S {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        self.ensure_same_manifest(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max))
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            manifest: self.manifest.clone(),
            values: self.values.iter().map(|&v| T::of(v.to_f64_lossy())).collect(),
        }
    }
}

fn describe(spec: Option<&TensorSpec>) -> String {
    match spec {
        Some(s) => format!("{}{:?}", s.name, s.shape),
        None => "<missing>".to_string(),
    }
}

fn unit_interval<S: Scalar>(name: &str, v: S) -> Result<()> {
    if v.is_finite() && v >= S::zero() && v <= S::one() {
        Ok(())
    } else {
        Err(LabError::argument(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Weight offset `theta_ft - theta_base`.
pub fn offset<S: Scalar>(theta_ft: &ParamSet<S>, theta_base: &ParamSet<S>) -> Result<ParamSet<S>> {
    theta_ft.sub(theta_base)
}

/// `theta + gamma * eta`, the convex merge of `theta + eta` with `theta`.
pub fn merge_convex<S: Scalar>(
    theta: &ParamSet<S>,
    eta: &ParamSet<S>,
    gamma: S,
) -> Result<ParamSet<S>> {
    unit_interval("gamma", gamma)?;
    theta.combine(eta, |t, e| t + gamma * e)
}

/// Negative-branch weights `theta + alpha * eta + beta * delta`.
pub fn compose_neg<S: Scalar>(
    theta: &ParamSet<S>,
    eta: &ParamSet<S>,
    delta: &ParamSet<S>,
    alpha: S,
    beta: S,
) -> Result<ParamSet<S>> {
    unit_interval("alpha", alpha)?;
    unit_interval("beta", beta)?;
    theta.ensure_same_manifest(eta)?;
    theta.ensure_same_manifest(delta)?;
    let values: Vec<S> = theta
        .values
        .iter()
        .zip(&eta.values)
        .zip(&delta.values)
        .map(|((&t, &e), &d)| t + alpha * e + beta * d)
        .collect();
    check_finite("compose_neg", &values)?;
    Ok(theta.with_values(values))
}

/// Split of `delta` into components parallel and orthogonal to `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetDecomposition<S> {
    pub parallel: ParamSet<S>,
    pub orthogonal: ParamSet<S>,
    /// Cosine similarity between `eta` and `delta`.
    pub cosine: S,
}

impl<S: Scalar> OffsetDecomposition<S> {
    /// Cosine between the two components; zero when either vanishes.
    pub fn component_cosine(&self) -> S {
        let d = dot(self.parallel.values(), self.orthogonal.values());
        d / (self.parallel.norm() * self.orthogonal.norm() + S::of(1e-12))
    }
}

pub fn project_offsets<S: Scalar>(
    eta: &ParamSet<S>,
    delta: &ParamSet<S>,
) -> Result<OffsetDecomposition<S>> {
    eta.ensure_same_manifest(delta)?;
    let eta_sq = dot(&eta.values, &eta.values);
    let eta_norm = eta_sq.sqrt();
    if !(eta_norm > S::of(1e-12)) {
        return Err(LabError::Singularity(format!(
            "cannot project onto an offset of norm {eta_norm}"
        )));
    }
    let d = dot(&eta.values, &delta.values);
    let coef = d / eta_sq;
    let parallel = eta.scale(coef)?;
    let orthogonal = delta.sub(&parallel)?;
    let delta_norm = delta.norm();
    let cosine = if delta_norm > S::zero() {
        d / (eta_norm * delta_norm)
    } else {
        S::zero()
    };
    Ok(OffsetDecomposition {
        parallel,
        orthogonal,
        cosine,
    })
}

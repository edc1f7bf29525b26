//! Points on the probability simplex and the scalarization primitives built on them.

use std::ops::Index;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Absolute tolerance for "entries sum to one".
pub fn sum_tolerance<T: Scalar>() -> f64 {
    (64.0 * T::epsilon().f64()).max(1e-9)
}

/// Inputs whose sum is off by less than this are renormalized on ingestion.
pub fn renormalize_tolerance<T: Scalar>() -> f64 {
    (1024.0 * T::epsilon().f64()).max(1e-6)
}

/// A preference weight vector: K non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>", bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct Weights<T: Scalar>(Vec<T>);

impl<T: Scalar> Weights<T> {
    /// Validates `values`; sums within the renormalization band are rescaled with a warning.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!("weight vector needs K >= 2 entries, got {}", values.len())));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < T::zero()) {
            return Err(Error::MalformedWeights(format!("entry {bad} is negative or not finite")));
        }
        let total: T = values.iter().copied().sum();
        let off = (total.f64() - 1.0).abs();
        if off <= sum_tolerance::<T>() {
            Ok(Weights(values))
        } else if off <= renormalize_tolerance::<T>() {
            log::warn!("weights sum to {total}; renormalizing");
            Ok(Weights(values.into_iter().map(|v| v / total).collect()))
        } else {
            Err(Error::MalformedWeights(format!("entries sum to {total}, expected 1")))
        }
    }

    /// Divides by the sum. Entries must be non-negative with a positive sum.
    pub fn normalized(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::MalformedWeights("negative or non-finite entry".into()));
        }
        let total: T = values.iter().copied().sum();
        if total <= T::zero() {
            return Err(Error::MalformedWeights("entries sum to zero".into()));
        }
        Weights::new(values.into_iter().map(|v| v / total).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("K must be >= 2, got {k}")));
        }
        Ok(Weights(vec![T::one() / T::of_usize(k); k]))
    }

    pub fn one_hot(k: usize, index: usize) -> Result<Self> {
        if k < 2 || index >= k {
            return Err(Error::invalid(format!("one-hot index {index} invalid for K={k}")));
        }
        let mut v = vec![T::zero(); k];
        v[index] = T::one();
        Ok(Weights(v))
    }

    /// Weights where objective `index` is `nu` times every other objective.
    pub fn peaked(k: usize, index: usize, nu: T) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("K must be >= 2, got {k}")));
        }
        if index >= k {
            return Err(Error::invalid(format!("objective index {index} out of range for K={k}")));
        }
        if !(nu >= T::one()) {
            return Err(Error::invalid(format!("prioritization factor must be >= 1, got {nu}")));
        }
        let denom = nu + T::of_usize(k - 1);
        let mut v = vec![T::one() / denom; k];
        v[index] = nu / denom;
        Ok(Weights(v))
    }

    /// Uniform draw from the simplex: K unit exponentials normalized by their sum.
    pub fn sample<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("K must be >= 2, got {k}")));
        }
        let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        Ok(Weights(draws.into_iter().map(|d| T::of(d / total)).collect()))
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn to_f64(&self) -> Weights<f64> {
        Weights(self.0.iter().map(|v| v.f64()).collect())
    }

    /// Builds without validation; callers guarantee the simplex invariants.
    pub(crate) fn from_raw(values: Vec<T>) -> Self {
        Weights(values)
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for Weights<T> {
    type Error = Error;
    fn try_from(v: Vec<T>) -> Result<Self> {
        Weights::new(v)
    }
}

impl<T: Scalar> From<Weights<T>> for Vec<T> {
    fn from(w: Weights<T>) -> Vec<T> {
        w.0
    }
}

impl<T: Scalar> Index<usize> for Weights<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

/// Per-objective reward vector (one step, or a whole trajectory's return).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct SubRewards<T: Scalar>(pub Vec<T>);

impl<T: Scalar> SubRewards<T> {
    pub fn zeros(k: usize) -> Self {
        SubRewards(vec![T::zero(); k])
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn add_assign(&mut self, other: &SubRewards<T>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a = *a + *b;
        }
    }

    pub fn scaled(&self, s: T) -> SubRewards<T> {
        SubRewards(self.0.iter().map(|&v| v * s).collect())
    }

    pub fn sub(&self, other: &SubRewards<T>) -> SubRewards<T> {
        SubRewards(self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect())
    }
}

impl<T: Scalar> Index<usize> for SubRewards<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Scalarized reward `wᵀr`.
pub fn scalarize<T: Scalar>(w: &Weights<T>, r: &SubRewards<T>) -> Result<T> {
    check_dims(w.k(), r.k())?;
    Ok(dot(w.as_slice(), r.as_slice()))
}

/// Cosine of the angle between two weight vectors, in [0, 1].
pub fn cosine_similarity<T: Scalar>(a: &Weights<T>, b: &Weights<T>) -> Result<T> {
    cosine(a.as_slice(), b.as_slice())
}

pub(crate) fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == T::zero() || nb == T::zero() {
        return Err(Error::invalid("cosine of a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).min(T::one()))
}

/// On-disk weight file: `{"objectives": [...], "weights": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WeightFile {
    pub objectives: Vec<String>,
    pub weights: Vec<f64>,
}

impl WeightFile {
    pub fn new(objectives: &[&str], w: &Weights<f64>) -> Self {
        WeightFile {
            objectives: objectives.iter().map(|s| s.to_string()).collect(),
            weights: w.as_slice().to_vec(),
        }
    }

    pub fn weights(&self) -> Result<Weights<f64>> {
        if self.objectives.len() != self.weights.len() {
            return Err(Error::ArityMismatch { expected: self.objectives.len(), found: self.weights.len() });
        }
        Weights::new(self.weights.clone())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

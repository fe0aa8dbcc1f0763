//! Normalized nonnegative vectors over a finite domain.
//!
//! Messages and beliefs are all carried as [`DiscreteDistribution`]s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonnegative vector over a variable's finite domain.
///
/// Constructors only check finiteness and sign; call [`normalize`] to obtain
/// a proper probability vector.
///
/// [`normalize`]: DiscreteDistribution::normalize
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiscreteDistribution {
    values: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("distribution over an empty domain".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Argument(format!(
                "distribution entries must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self { values })
    }

    /// Builds and normalizes in one step; fails if the entries sum to zero.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let mut d = Self::new(values)?;
        if !d.normalize() {
            return Err(Error::Argument("distribution sums to zero".into()));
        }
        Ok(d)
    }

    pub fn uniform(size: usize) -> Self {
        assert!(size > 0, "uniform distribution over an empty domain");
        Self {
            values: vec![1.0 / size as f64; size],
        }
    }

    pub fn one_hot(size: usize, state: usize) -> Self {
        assert!(state < size, "one-hot state {state} outside domain {size}");
        let mut values = vec![0.0; size];
        values[state] = 1.0;
        Self { values }
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Scales entries to sum to one. Returns `false`, leaving the vector
    /// untouched, when the sum is zero or not finite.
    pub fn normalize(&mut self) -> bool {
        normalize_in_place(&mut self.values)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.values.iter().all(|v| v.is_finite() && *v >= 0.0) && (self.sum() - 1.0).abs() <= tol
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_abs_diff(&self.values, &other.values)
    }
}

impl std::ops::Index<usize> for DiscreteDistribution {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

pub(crate) fn normalize_in_place(values: &mut [f64]) -> bool {
    let s: f64 = values.iter().sum();
    if !(s.is_finite() && s > 0.0) {
        return false;
    }
    let inv = 1.0 / s;
    values.iter_mut().for_each(|v| *v *= inv);
    // one correction pass keeps the sum within a couple of ulps of 1
    let s2: f64 = values.iter().sum();
    if s2 != 1.0 {
        let inv2 = 1.0 / s2;
        values.iter_mut().for_each(|v| *v *= inv2);
    }
    true
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

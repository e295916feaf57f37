//! Points on the probability simplex.

use alloc::vec::Vec;
use num_traits::Float;
use thiserror::Error;

/// Index into a [`crate::corpus::Vocab`].
pub type TokenId = u32;

/// Lower bound applied before every logarithm and inside the combine rule.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on `|sum - 1|` accepted by [`ProbVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("probability vector is empty")]
    Empty,
    #[error("entry {index} is {value}, expected a finite non-negative value")]
    BadEntry { index: usize, value: f64 },
    #[error("entries sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("vector has zero total mass")]
    ZeroMass,
}

/// A next-token distribution over a vocabulary.
///
/// Entries are non-negative and sum to one within [`SIMPLEX_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Wrap `probs`, checking the simplex invariant.
    pub fn new(probs: Vec<f64>) -> Result<Self, ProbError> {
        if probs.is_empty() {
            return Err(ProbError::Empty);
        }
        for (index, &value) in probs.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ProbError::BadEntry { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(ProbError::NotNormalized { sum });
        }
        Ok(Self(probs))
    }

    /// Divide non-negative weights by their total.
    pub fn normalize(weights: Vec<f64>) -> Result<Self, ProbError> {
        if weights.is_empty() {
            return Err(ProbError::Empty);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ProbError::BadEntry { index, value });
            }
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(ProbError::ZeroMass);
        }
        Ok(Self(weights.into_iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(size: usize) -> Self {
        assert!(size > 0);
        Self(alloc::vec![1.0 / size as f64; size])
    }

    pub fn one_hot(size: usize, index: usize) -> Self {
        let mut v = alloc::vec![0.0; size];
        v[index] = 1.0;
        Self(v)
    }

    /// Max-subtracted softmax of `logits`.
    pub fn softmax(logits: &[f64]) -> Self {
        Self(softmax(logits))
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, token: TokenId) -> f64 {
        self.0[token as usize]
    }

    /// Index of the largest entry; ties go to the lowest id.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.0) as TokenId
    }

    /// Natural-log entries, floored at [`PROB_FLOOR`].
    pub fn log_probs(&self) -> Vec<f64> {
        self.0.iter().map(|&p| p.max(PROB_FLOOR).ln()).collect()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    /// `KL(self || other)` in nats, with `other` floored at [`PROB_FLOOR`].
    pub fn kl_divergence(&self, other: &ProbVector) -> f64 {
        assert_eq!(self.len(), other.len(), "kl over mismatched vocabularies");
        self.0
            .iter()
            .zip(&other.0)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &q)| p * (p.ln() - q.max(PROB_FLOOR).ln()))
            .sum()
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// First index of the maximum; NaN entries are never selected.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

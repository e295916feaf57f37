//! The plugin combine rule, its sequence loss, and the baselines it is
//! compared against.
//!
//! The plugin distribution at each step is `p = (b ⊙ r) / ‖b ⊙ r‖₁`, where
//! `b` comes from a frozen [`BlackBox`] and `r` from a trainable reweighter.
//! Both inputs are floored at [`PROB_FLOOR`] before the product.

mod predict;
mod train;

pub use predict::{
    heldout_nll, BasePredictor, PluginPredictor, Predictor, StepProbs, TemperaturePredictor, WeightedCombPredictor,
};
pub use train::{
    batch_loss, cross_validate, select_alpha, train, train_plugin, Batch, CvOutcome, EarlyStopping, EpochRecord,
    Example, LossScope, NewModel, PluginModel, TemperatureModel, TrainConfig, TrainHistory, Trainable,
};

use alloc::vec::Vec;
use num_traits::Float;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::models::{BlackBox, ModelError};
use crate::prob::ProbError;
use crate::{ProbVector, TokenId, PROB_FLOOR};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PluginError {
    #[error("vocabulary mismatch: {left} vs {right}")]
    VocabMismatch { left: usize, right: usize },
    #[error("length mismatch: {left} distributions vs {right} targets")]
    LengthMismatch { left: usize, right: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("temperature {0} must be positive")]
    BadTemperature(f64),
    #[error("bad training configuration: {0}")]
    BadConfig(&'static str),
    #[error("product of distributions has no mass")]
    ZeroMass,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl From<ProbError> for PluginError {
    fn from(_: ProbError) -> Self {
        PluginError::ZeroMass
    }
}

/// Normalized elementwise product of two distributions over one vocabulary.
pub fn combine(b: &ProbVector, r: &ProbVector) -> Result<ProbVector, PluginError> {
    if b.len() != r.len() {
        return Err(PluginError::VocabMismatch {
            left: b.len(),
            right: r.len(),
        });
    }
    let prod: Vec<f64> = b
        .as_slice()
        .iter()
        .zip(r.as_slice())
        .map(|(&x, &y)| x.max(PROB_FLOOR) * y.max(PROB_FLOOR))
        .collect();
    Ok(ProbVector::normalize(prod)?)
}

/// Mean negative log-likelihood of `targets` under `p_seq`.
pub fn sequence_loss(p_seq: &[ProbVector], targets: &[TokenId]) -> Result<f64, PluginError> {
    if p_seq.len() != targets.len() || p_seq.is_empty() {
        return Err(PluginError::LengthMismatch {
            left: p_seq.len(),
            right: targets.len(),
        });
    }
    let total: f64 = p_seq
        .iter()
        .zip(targets)
        .map(|(p, &t)| -p.get(t).max(PROB_FLOOR).ln())
        .sum();
    Ok(total / targets.len() as f64)
}

/// `alpha * n + (1 - alpha) * b`.
pub fn weighted_comb(n: &ProbVector, b: &ProbVector, alpha: f64) -> Result<ProbVector, PluginError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PluginError::AlphaOutOfRange(alpha));
    }
    if n.len() != b.len() {
        return Err(PluginError::VocabMismatch {
            left: n.len(),
            right: b.len(),
        });
    }
    let mix = n
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| alpha * x + (1.0 - alpha) * y)
        .collect();
    ProbVector::new(mix).map_err(|_| PluginError::ZeroMass)
}

/// `softmax(logits / tau)`.
pub fn temperature_baseline(b_logits: &[f64], tau: f64) -> Result<ProbVector, PluginError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(PluginError::BadTemperature(tau));
    }
    let scaled: Vec<f64> = b_logits.iter().map(|z| z / tau).collect();
    Ok(ProbVector::softmax(&scaled))
}

pub(crate) fn same_vocab(base: &BlackBox, other: usize) -> Result<(), PluginError> {
    if base.vocab_size() != other {
        return Err(PluginError::VocabMismatch {
            left: base.vocab_size(),
            right: other,
        });
    }
    Ok(())
}

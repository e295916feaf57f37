use alloc::vec::Vec;

use super::{combine, same_vocab, temperature_baseline, weighted_comb, LossScope, PluginError};
use crate::corpus::Record;
use crate::models::{BlackBox, LanguageModel};
use crate::{ProbVector, TokenId};

/// Distributions produced at one decoding step. `base` and `reweight` are
/// the components when the predictor has them.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProbs {
    pub base: Option<ProbVector>,
    pub reweight: Option<ProbVector>,
    pub combined: ProbVector,
}

/// A next-token distribution assembled from one or more models.
pub trait Predictor {
    fn vocab(&self) -> usize;

    /// Smallest window among the components, BOS included.
    fn window(&self) -> Option<usize>;

    fn step(&self, context: &[TokenId]) -> Result<StepProbs, PluginError>;

    /// Teacher-forced distributions for every position of `tokens`.
    fn sequence(&self, tokens: &[TokenId]) -> Result<Vec<ProbVector>, PluginError>;
}

fn min_window(a: Option<usize>, b: Option<usize>) -> Option<usize> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Any language model used on its own.
impl<M: LanguageModel + ?Sized> Predictor for M {
    fn vocab(&self) -> usize {
        LanguageModel::vocab_size(self)
    }

    fn window(&self) -> Option<usize> {
        LanguageModel::context_window(self)
    }

    fn step(&self, context: &[TokenId]) -> Result<StepProbs, PluginError> {
        Ok(StepProbs {
            base: None,
            reweight: None,
            combined: self.next_token_probs(context)?,
        })
    }

    fn sequence(&self, tokens: &[TokenId]) -> Result<Vec<ProbVector>, PluginError> {
        Ok(self.sequence_probs(tokens)?)
    }
}

/// The frozen model alone.
#[derive(Debug, Clone, Copy)]
pub struct BasePredictor<'a> {
    pub base: &'a BlackBox,
}

impl Predictor for BasePredictor<'_> {
    fn vocab(&self) -> usize {
        self.base.vocab_size()
    }

    fn window(&self) -> Option<usize> {
        self.base.context_window()
    }

    fn step(&self, context: &[TokenId]) -> Result<StepProbs, PluginError> {
        let b = self.base.next_token_probs(context)?;
        Ok(StepProbs {
            base: Some(b.clone()),
            reweight: None,
            combined: b,
        })
    }

    fn sequence(&self, tokens: &[TokenId]) -> Result<Vec<ProbVector>, PluginError> {
        Ok(self.base.sequence_probs(tokens)?)
    }
}

/// Frozen base reweighted by a second model.
#[derive(Debug, Clone, Copy)]
pub struct PluginPredictor<'a> {
    base: &'a BlackBox,
    reweighter: &'a dyn LanguageModel,
}

impl<'a> PluginPredictor<'a> {
    pub fn new(base: &'a BlackBox, reweighter: &'a dyn LanguageModel) -> Result<Self, PluginError> {
        same_vocab(base, reweighter.vocab_size())?;
        Ok(Self { base, reweighter })
    }
}

impl Predictor for PluginPredictor<'_> {
    fn vocab(&self) -> usize {
        self.base.vocab_size()
    }

    fn window(&self) -> Option<usize> {
        min_window(self.base.context_window(), self.reweighter.context_window())
    }

    fn step(&self, context: &[TokenId]) -> Result<StepProbs, PluginError> {
        let b = self.base.next_token_probs(context)?;
        let r = self.reweighter.next_token_probs(context)?;
        let p = combine(&b, &r)?;
        Ok(StepProbs {
            base: Some(b),
            reweight: Some(r),
            combined: p,
        })
    }

    fn sequence(&self, tokens: &[TokenId]) -> Result<Vec<ProbVector>, PluginError> {
        let bs = self.base.sequence_probs(tokens)?;
        let rs = self.reweighter.sequence_probs(tokens)?;
        bs.iter().zip(&rs).map(|(b, r)| combine(b, r)).collect()
    }
}

/// `alpha * n + (1 - alpha) * b` with a separately trained model `n`.
#[derive(Debug, Clone, Copy)]
pub struct WeightedCombPredictor<'a> {
    base: &'a BlackBox,
    new_model: &'a dyn LanguageModel,
    alpha: f64,
}

impl<'a> WeightedCombPredictor<'a> {
    pub fn new(base: &'a BlackBox, new_model: &'a dyn LanguageModel, alpha: f64) -> Result<Self, PluginError> {
        same_vocab(base, new_model.vocab_size())?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(PluginError::AlphaOutOfRange(alpha));
        }
        Ok(Self { base, new_model, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Predictor for WeightedCombPredictor<'_> {
    fn vocab(&self) -> usize {
        self.base.vocab_size()
    }

    fn window(&self) -> Option<usize> {
        min_window(self.base.context_window(), self.new_model.context_window())
    }

    fn step(&self, context: &[TokenId]) -> Result<StepProbs, PluginError> {
        let b = self.base.next_token_probs(context)?;
        let n = self.new_model.next_token_probs(context)?;
        let p = weighted_comb(&n, &b, self.alpha)?;
        Ok(StepProbs {
            base: Some(b),
            reweight: Some(n),
            combined: p,
        })
    }

    fn sequence(&self, tokens: &[TokenId]) -> Result<Vec<ProbVector>, PluginError> {
        let bs = self.base.sequence_probs(tokens)?;
        let ns = self.new_model.sequence_probs(tokens)?;
        bs.iter()
            .zip(&ns)
            .map(|(b, n)| weighted_comb(n, b, self.alpha))
            .collect()
    }
}

/// Base log-probabilities divided by a single temperature.
#[derive(Debug, Clone, Copy)]
pub struct TemperaturePredictor<'a> {
    base: &'a BlackBox,
    tau: f64,
}

impl<'a> TemperaturePredictor<'a> {
    pub fn new(base: &'a BlackBox, tau: f64) -> Result<Self, PluginError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(PluginError::BadTemperature(tau));
        }
        Ok(Self { base, tau })
    }
}

impl Predictor for TemperaturePredictor<'_> {
    fn vocab(&self) -> usize {
        self.base.vocab_size()
    }

    fn window(&self) -> Option<usize> {
        self.base.context_window()
    }

    fn step(&self, context: &[TokenId]) -> Result<StepProbs, PluginError> {
        let b = self.base.next_token_probs(context)?;
        let p = temperature_baseline(&b.log_probs(), self.tau)?;
        Ok(StepProbs {
            base: Some(b),
            reweight: None,
            combined: p,
        })
    }

    fn sequence(&self, tokens: &[TokenId]) -> Result<Vec<ProbVector>, PluginError> {
        self.base
            .sequence_probs(tokens)?
            .iter()
            .map(|b| temperature_baseline(&b.log_probs(), self.tau))
            .collect()
    }
}

/// Mean per-record sequence loss under `predictor`, scoring the positions
/// selected by `scope`.
pub fn heldout_nll<P: Predictor + ?Sized>(
    predictor: &P,
    records: &[Record],
    scope: LossScope,
) -> Result<f64, PluginError> {
    if records.is_empty() {
        return Err(PluginError::EmptySplit("evaluation"));
    }
    let mut total = 0.0;
    for rec in records {
        let tokens = rec.tokens();
        let probs = predictor.sequence(&tokens)?;
        let start = scope.first_scored(rec);
        total += super::sequence_loss(&probs[start..], &tokens[start..])?;
    }
    Ok(total / records.len() as f64)
}

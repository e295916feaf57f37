//! Language models exposed through a common next-token interface.
//!
//! [`LanguageModel`] is the only surface the plugin machinery needs: a
//! distribution for the next token given a context. [`NGramModel`] is the
//! analytic stand-in for a pretrained base model, [`TinyTransformer`] is the
//! trainable causal model used for reweighters and baselines, and
//! [`BlackBox`] freezes either one behind the probability interface.

mod blackbox;
mod fixed;
mod ngram;
mod params;
mod transformer;

pub use blackbox::{freeze, BlackBox};
pub use fixed::{BigramTable, ConstantModel, UniformModel};
pub use ngram::{fit_ngram, NGramModel};
pub use params::ParamSet;
pub use transformer::{init_transformer, TinyTransformer, TransformerConfig};

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Debug;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::{ProbVector, TokenId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("context of {len} tokens exceeds window of {window} positions (BOS included)")]
    ContextTooLong { len: usize, window: usize },
    #[error("sequence is empty")]
    EmptySequence,
    #[error("token {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: TokenId, size: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("bad model configuration: {0}")]
    BadConfig(String),
    #[error("vocabulary mismatch: {left} vs {right}")]
    VocabMismatch { left: usize, right: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Anything that maps a token context to a next-token distribution.
pub trait LanguageModel: Debug + Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Maximum number of input positions, counting the implicit leading BOS.
    /// `None` means any context length is accepted.
    fn context_window(&self) -> Option<usize> {
        None
    }

    /// Distribution of the token following `context`. An empty context
    /// conditions on BOS alone.
    fn next_token_probs(&self, context: &[TokenId]) -> Result<ProbVector, ModelError>;

    /// Teacher-forced distributions: entry `i` is the distribution of
    /// `tokens[i]` given `tokens[..i]`.
    fn sequence_probs(&self, tokens: &[TokenId]) -> Result<Vec<ProbVector>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        (0..tokens.len()).map(|i| self.next_token_probs(&tokens[..i])).collect()
    }

    /// SHA-256 over everything that determines the model's outputs.
    fn parameter_digest(&self) -> [u8; 32];
}

impl<M: LanguageModel + ?Sized> LanguageModel for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn context_window(&self) -> Option<usize> {
        (**self).context_window()
    }
    fn next_token_probs(&self, context: &[TokenId]) -> Result<ProbVector, ModelError> {
        (**self).next_token_probs(context)
    }
    fn sequence_probs(&self, tokens: &[TokenId]) -> Result<Vec<ProbVector>, ModelError> {
        (**self).sequence_probs(tokens)
    }
    fn parameter_digest(&self) -> [u8; 32] {
        (**self).parameter_digest()
    }
}

pub(crate) fn check_tokens(tokens: &[TokenId], size: usize) -> Result<(), ModelError> {
    match tokens.iter().find(|&&t| t as usize >= size) {
        Some(&id) => Err(ModelError::TokenOutOfRange { id, size }),
        None => Ok(()),
    }
}

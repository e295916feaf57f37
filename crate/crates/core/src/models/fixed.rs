use sha2::{Digest, Sha256};

use super::{check_tokens, LanguageModel, ModelError};
use alloc::vec::Vec;

use crate::corpus::BOS;
use crate::{ProbVector, TokenId};

/// The uniform distribution at every step. Used as the identity reweighter.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformModel {
    vocab_size: usize,
}

impl UniformModel {
    pub fn new(vocab_size: usize) -> Self {
        assert!(vocab_size > 0);
        Self { vocab_size }
    }
}

impl LanguageModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_probs(&self, context: &[TokenId]) -> Result<ProbVector, ModelError> {
        check_tokens(context, self.vocab_size)?;
        Ok(ProbVector::uniform(self.vocab_size))
    }

    fn parameter_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"uniform");
        h.update((self.vocab_size as u64).to_le_bytes());
        h.finalize().into()
    }
}

/// The same distribution regardless of context.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantModel {
    probs: ProbVector,
}

impl ConstantModel {
    pub fn new(probs: ProbVector) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &ProbVector {
        &self.probs
    }
}

impl LanguageModel for ConstantModel {
    fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    fn next_token_probs(&self, context: &[TokenId]) -> Result<ProbVector, ModelError> {
        check_tokens(context, self.probs.len())?;
        Ok(self.probs.clone())
    }

    fn parameter_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"constant");
        for p in self.probs.as_slice() {
            h.update(p.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }
}

/// A distribution per previous token; the empty context uses the BOS row.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramTable {
    rows: Vec<ProbVector>,
}

impl BigramTable {
    /// `rows[i]` is the distribution after token `i`.
    pub fn new(rows: Vec<ProbVector>) -> Result<Self, ModelError> {
        let v = rows.len();
        if v == 0 {
            return Err(ModelError::EmptyCorpus);
        }
        if let Some(r) = rows.iter().find(|r| r.len() != v) {
            return Err(ModelError::VocabMismatch {
                left: v,
                right: r.len(),
            });
        }
        Ok(Self { rows })
    }

    pub fn row(&self, prev: TokenId) -> &ProbVector {
        &self.rows[prev as usize]
    }

    pub fn rows(&self) -> &[ProbVector] {
        &self.rows
    }
}

impl LanguageModel for BigramTable {
    fn vocab_size(&self) -> usize {
        self.rows.len()
    }

    fn next_token_probs(&self, context: &[TokenId]) -> Result<ProbVector, ModelError> {
        check_tokens(context, self.rows.len())?;
        Ok(self.row(context.last().copied().unwrap_or(BOS)).clone())
    }

    fn parameter_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"bigram");
        for r in &self.rows {
            for p in r.as_slice() {
                h.update(p.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

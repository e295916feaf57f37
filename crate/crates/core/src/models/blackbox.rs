use alloc::boxed::Box;
use alloc::vec::Vec;

use super::{LanguageModel, ModelError};
use crate::{ProbVector, TokenId};

/// A frozen model reachable only through its probability interface.
///
/// Outputs are plain [`ProbVector`]s, so whatever a caller builds on a tape
/// from them is a constant: no gradient path leads back into the wrapped
/// parameters. The parameter digest is captured at freeze time and can be
/// re-checked with [`BlackBox::verify`].
#[derive(Debug)]
pub struct BlackBox {
    inner: Box<dyn LanguageModel>,
    digest: [u8; 32],
}

pub fn freeze<M: LanguageModel + 'static>(model: M) -> BlackBox {
    BlackBox::new(Box::new(model))
}

impl BlackBox {
    pub fn new(inner: Box<dyn LanguageModel>) -> Self {
        let digest = inner.parameter_digest();
        Self { inner, digest }
    }

    /// Digest recorded when the model was frozen.
    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    /// True when the wrapped parameters still hash to the frozen digest.
    pub fn verify(&self) -> bool {
        self.inner.parameter_digest() == self.digest
    }

    pub fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    pub fn context_window(&self) -> Option<usize> {
        self.inner.context_window()
    }

    pub fn next_token_probs(&self, context: &[TokenId]) -> Result<ProbVector, ModelError> {
        self.inner.next_token_probs(context)
    }

    pub fn sequence_probs(&self, tokens: &[TokenId]) -> Result<Vec<ProbVector>, ModelError> {
        self.inner.sequence_probs(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_ngram, init_transformer, TransformerConfig};
    use alloc::vec;

    #[test]
    fn ngram_and_transformer_share_the_interface() {
        let ng = fit_ngram(&[vec![3, 4, 3, 4]], 2, 1.0, 5).unwrap();
        let tf = init_transformer(TransformerConfig::small(5, 8), 0).unwrap();
        let expected_ng = ng.next_token_probs(&[3]).unwrap();
        let expected_tf = tf.next_token_probs(&[3]).unwrap();
        let boxes = [freeze(ng), freeze(tf)];
        for (bb, expected) in boxes.iter().zip([expected_ng, expected_tf]) {
            assert_eq!(bb.vocab_size(), 5);
            assert_eq!(bb.next_token_probs(&[3]).unwrap(), expected);
            assert_eq!(bb.sequence_probs(&[3, 4]).unwrap().len(), 2);
            assert!(bb.verify());
        }
    }
}

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use sha2::{Digest, Sha256};

use super::{check_tokens, LanguageModel, ModelError};
use crate::corpus::BOS;
use crate::{ProbVector, TokenId};

#[derive(Debug, Clone, PartialEq, Default)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

/// Add-λ smoothed n-gram model with recursive fallback to shorter contexts.
///
/// Sequences are left-padded with `order - 1` BOS tokens, so the first token
/// of every sequence is conditioned on BOS. A context never seen during
/// fitting falls back to the next shorter one, down to the unigram table.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    lambda: f64,
    vocab_size: usize,
    /// `tables[k]` maps `k`-token contexts to successor counts.
    tables: Vec<BTreeMap<Vec<TokenId>, ContextCounts>>,
}

/// Count n-grams of every order up to `order` over `corpus`.
pub fn fit_ngram(
    corpus: &[Vec<TokenId>],
    order: usize,
    lambda: f64,
    vocab_size: usize,
) -> Result<NGramModel, ModelError> {
    if order == 0 {
        return Err(ModelError::BadConfig("n-gram order must be at least 1".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ModelError::BadConfig("smoothing lambda must be positive".into()));
    }
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(ModelError::EmptyCorpus);
    }
    let mut tables = vec![BTreeMap::new(); order];
    let pad = order - 1;
    for seq in corpus {
        check_tokens(seq, vocab_size)?;
        let mut padded = vec![BOS; pad];
        padded.extend_from_slice(seq);
        for i in pad..padded.len() {
            let next = padded[i];
            for (k, table) in tables.iter_mut().enumerate() {
                let entry: &mut ContextCounts = table.entry(padded[i - k..i].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(next).or_insert(0) += 1;
            }
        }
    }
    Ok(NGramModel {
        order,
        lambda,
        vocab_size,
        tables,
    })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Every `(context, next, count)` triple, shortest contexts first.
    pub fn entries(&self) -> impl Iterator<Item = (&[TokenId], TokenId, u64)> + '_ {
        self.tables.iter().flat_map(|t| {
            t.iter()
                .flat_map(|(ctx, c)| c.next.iter().map(move |(&n, &k)| (ctx.as_slice(), n, k)))
        })
    }

    /// Rebuild from [`NGramModel::entries`] output.
    pub fn from_entries<'a, I>(order: usize, lambda: f64, vocab_size: usize, entries: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (&'a [TokenId], TokenId, u64)>,
    {
        if order == 0 || !(lambda > 0.0) {
            return Err(ModelError::BadConfig("bad n-gram header".into()));
        }
        let mut tables: Vec<BTreeMap<Vec<TokenId>, ContextCounts>> = vec![BTreeMap::new(); order];
        for (ctx, next, count) in entries {
            if ctx.len() >= order {
                return Err(ModelError::BadConfig("context longer than order".into()));
            }
            check_tokens(ctx, vocab_size)?;
            check_tokens(&[next], vocab_size)?;
            let e = tables[ctx.len()].entry(ctx.to_vec()).or_default();
            e.total += count;
            *e.next.entry(next).or_insert(0) += count;
        }
        if tables[0].is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        Ok(Self {
            order,
            lambda,
            vocab_size,
            tables,
        })
    }

    fn counts_for(&self, context: &[TokenId]) -> &ContextCounts {
        let pad = self.order - 1;
        let mut padded = vec![BOS; pad.saturating_sub(context.len())];
        let tail = &context[context.len().saturating_sub(pad)..];
        padded.extend_from_slice(tail);
        for k in (0..self.order).rev() {
            if let Some(c) = self.tables[k].get(&padded[pad - k..]) {
                if c.total > 0 {
                    return c;
                }
            }
        }
        unreachable!("unigram table is never empty")
    }
}

impl LanguageModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_probs(&self, context: &[TokenId]) -> Result<ProbVector, ModelError> {
        check_tokens(context, self.vocab_size)?;
        let c = self.counts_for(context);
        let denom = c.total as f64 + self.lambda * self.vocab_size as f64;
        let mut probs = vec![self.lambda / denom; self.vocab_size];
        for (&t, &n) in &c.next {
            probs[t as usize] = (n as f64 + self.lambda) / denom;
        }
        Ok(ProbVector::new(probs).expect("smoothed counts are normalized"))
    }

    fn parameter_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"ngram");
        h.update((self.order as u64).to_le_bytes());
        h.update(self.lambda.to_bits().to_le_bytes());
        h.update((self.vocab_size as u64).to_le_bytes());
        for (ctx, next, count) in self.entries() {
            h.update((ctx.len() as u64).to_le_bytes());
            for t in ctx {
                h.update(t.to_le_bytes());
            }
            h.update(next.to_le_bytes());
            h.update(count.to_le_bytes());
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: TokenId = 3;
    const B: TokenId = 4;

    fn abab() -> NGramModel {
        fit_ngram(&[vec![A, B, A, B]], 2, 1.0, 5).unwrap()
    }

    #[test]
    fn bigram_hand_count() {
        let p = abab().next_token_probs(&[A]).unwrap();
        assert!((p.get(B) - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(p.argmax(), B);
    }

    #[test]
    fn unseen_context_falls_back_to_unigram() {
        // context [2] never appears; unigram counts: a=2, b=2, total 4
        let p = abab().next_token_probs(&[2]).unwrap();
        assert!((p.get(A) - 3.0 / 9.0).abs() < 1e-15);
        assert!((p.get(B) - 3.0 / 9.0).abs() < 1e-15);
        assert!((p.get(0) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn empty_context_conditions_on_bos() {
        // BOS -> a once
        let p = abab().next_token_probs(&[]).unwrap();
        assert!((p.get(A) - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn huge_lambda_is_uniform() {
        let m = fit_ngram(&[vec![A, B, A, B]], 2, 1e12, 5).unwrap();
        let p = m.next_token_probs(&[A]).unwrap();
        for &v in p.as_slice() {
            assert!((v - 0.2).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        assert_eq!(fit_ngram(&[], 2, 1.0, 5), Err(ModelError::EmptyCorpus));
        assert_eq!(fit_ngram(&[vec![]], 2, 1.0, 5), Err(ModelError::EmptyCorpus));
        assert!(matches!(
            fit_ngram(&[vec![A]], 0, 1.0, 5),
            Err(ModelError::BadConfig(_))
        ));
        assert_eq!(
            fit_ngram(&[vec![9]], 2, 1.0, 5),
            Err(ModelError::TokenOutOfRange { id: 9, size: 5 })
        );
    }

    #[test]
    fn entries_round_trip() {
        let m = fit_ngram(&[vec![A, B, A, B, 1], vec![B, B]], 3, 0.5, 5).unwrap();
        let entries: Vec<(Vec<TokenId>, TokenId, u64)> = m.entries().map(|(c, n, k)| (c.to_vec(), n, k)).collect();
        let r = NGramModel::from_entries(3, 0.5, 5, entries.iter().map(|(c, n, k)| (c.as_slice(), *n, *k))).unwrap();
        assert_eq!(r, m);
        assert_eq!(r.parameter_digest(), m.parameter_digest());
    }
}

//! Vocabularies, tokenization, records and dataset splits.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use num_traits::Float;
use thiserror::Error;

use crate::rng::Stream;
use crate::TokenId;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

const RESERVED: [&str; 3] = [BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("need at least {needed} records to split, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("split fraction {0} must lie strictly inside (0, 1)")]
    BadFraction(f64),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("record target is empty")]
    EmptyTarget,
    #[error("bad vocabulary file at line {line}: {reason}")]
    BadVocab { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tokenizer {
    /// Lowercase, split on whitespace, keep only word characters.
    #[default]
    Whitespace,
    /// One token per character, no normalization.
    Character,
}

impl Tokenizer {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Whitespace => text
                .split_whitespace()
                .map(|w| {
                    w.chars()
                        .filter(|c| c.is_alphanumeric() || *c == '_')
                        .collect::<String>()
                        .to_lowercase()
                })
                .filter(|w| !w.is_empty())
                .collect(),
            Tokenizer::Character => text.chars().map(|c| c.to_string()).collect(),
        }
    }

    pub fn join(self, tokens: &[&str]) -> String {
        match self {
            Tokenizer::Whitespace => tokens.join(" "),
            Tokenizer::Character => tokens.concat(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tokenizer::Whitespace => "whitespace",
            Tokenizer::Character => "character",
        }
    }
}

/// Ordered token list with the reserved ids `BOS = 0`, `EOS = 1`, `UNK = 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocab {
    /// Build from corpus tokens in first-occurrence order. Duplicates and
    /// strings equal to a reserved token are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self {
            tokens: Vec::new(),
            index: BTreeMap::new(),
        };
        for r in RESERVED {
            vocab.push(r);
        }
        for t in tokens {
            vocab.push(t.as_ref());
        }
        vocab
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            let id = self.tokens.len() as TokenId;
            self.tokens.push(token.to_string());
            self.index.insert(token.to_string(), id);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Never true: the reserved tokens are always present.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Map text to ids. Out-of-vocabulary tokens become [`UNK`].
    pub fn encode(&self, text: &str, tokenizer: Tokenizer) -> Vec<TokenId> {
        tokenizer
            .tokenize(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Map ids back to text, dropping `BOS`/`EOS`.
    pub fn decode(&self, ids: &[TokenId], tokenizer: Tokenizer) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id != BOS && id != EOS)
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect();
        tokenizer.join(&words)
    }

    /// Newline-separated token list; line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let lines: Vec<&str> = text.lines().collect();
        for (i, r) in RESERVED.iter().enumerate() {
            if lines.get(i) != Some(r) {
                return Err(CorpusError::BadVocab {
                    line: i + 1,
                    reason: alloc::format!("expected reserved token {r}"),
                });
            }
        }
        let vocab = Self::from_tokens(lines[3..].iter());
        if vocab.len() != lines.len() {
            return Err(CorpusError::BadVocab {
                line: 0,
                reason: "duplicate tokens".to_string(),
            });
        }
        Ok(vocab)
    }

    /// SHA-256 of [`Vocab::to_text`].
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}

/// Build a vocabulary from raw texts.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], tokenizer: Tokenizer) -> Result<Vocab, CorpusError> {
    if texts.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(Vocab::from_tokens(
        texts.iter().flat_map(|t| tokenizer.tokenize(t.as_ref())),
    ))
}

/// A conditioning prompt and its reference continuation.
///
/// Targets end with [`EOS`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl Record {
    pub fn new(prompt: Vec<TokenId>, target: Vec<TokenId>, vocab_size: usize) -> Result<Self, CorpusError> {
        if target.is_empty() {
            return Err(CorpusError::EmptyTarget);
        }
        if let Some(&id) = prompt.iter().chain(&target).find(|&&id| id as usize >= vocab_size) {
            return Err(CorpusError::IdOutOfRange { id, size: vocab_size });
        }
        Ok(Self { prompt, target })
    }

    /// Encode texts and append `EOS` to the target.
    pub fn from_text(prompt: &str, target: &str, vocab: &Vocab, tokenizer: Tokenizer) -> Self {
        let mut t = vocab.encode(target, tokenizer);
        t.push(EOS);
        Self {
            prompt: vocab.encode(prompt, tokenizer),
            target: t,
        }
    }

    /// Prompt followed by target.
    pub fn tokens(&self) -> Vec<TokenId> {
        let mut all = self.prompt.clone();
        all.extend_from_slice(&self.target);
        all
    }

    pub fn len(&self) -> usize {
        self.prompt.len() + self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How to carve train, validation and hyper-validation sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub hyperval_of_validation: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            validation_fraction: 0.2,
            hyperval_of_validation: 0.4,
            seed: 0,
        }
    }
}

/// Output of [`split_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub hyperval: Vec<T>,
}

pub const MIN_SPLIT_RECORDS: usize = 5;

/// Shuffle with the seeded stream, then cut train / validation / hyperval.
///
/// Sizes are `round(n * validation_fraction)` for validation plus hyperval,
/// of which `round(. * hyperval_of_validation)` go to hyperval. Every split
/// keeps at least one record (validation keeps at least two before the cut).
pub fn split_dataset<T: Clone>(records: &[T], spec: &SplitSpec) -> Result<Splits<T>, CorpusError> {
    for f in [spec.validation_fraction, spec.hyperval_of_validation] {
        if !(f > 0.0 && f < 1.0) {
            return Err(CorpusError::BadFraction(f));
        }
    }
    let n = records.len();
    if n < MIN_SPLIT_RECORDS {
        return Err(CorpusError::TooFewRecords {
            needed: MIN_SPLIT_RECORDS,
            got: n,
        });
    }
    let held = ((n as f64 * spec.validation_fraction).round() as usize).clamp(2, n - 1);
    let hyper = ((held as f64 * spec.hyperval_of_validation).round() as usize).clamp(1, held - 1);
    let mut order: Vec<usize> = (0..n).collect();
    Stream::new(spec.seed).shuffle(&mut order);
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<T>>();
    let n_train = n - held;
    Ok(Splits {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..n - hyper]),
        hyperval: pick(&order[n - hyper..]),
    })
}

//! Label-noise tools: transition matrices, corpus corruption, the forward
//! corrected loss, the naive transition estimator, a brute-force check that
//! forward correction recovers the clean minimizer, and a sequential
//! estimation experiment whose excess loss should fall like `1/t`.

mod consistency;
mod decay;
mod linalg;

pub use consistency::{consistency_check, ConsistencyReport, MAX_CONTEXTS, MAX_VOCAB};
pub use decay::{theorem1_decay, DecayConfig, DecayReport, ObservationNoise, ThetaFamily};

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::models::{ConstantModel, LanguageModel, ModelError};
use crate::rng::Stream;
use crate::{ProbVector, TokenId, PROB_FLOOR};

/// Row sums must be within this of 1.
pub const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("noise strength {0} must lie in [0, 1)")]
    BadStrength(f64),
    #[error("vocabulary mismatch: {left} vs {right}")]
    VocabMismatch { left: usize, right: usize },
    #[error("row {row} is not a probability distribution")]
    NotRowStochastic { row: usize },
    #[error("no data")]
    EmptyData,
    #[error("entry {index} must be positive")]
    NonPositive { index: usize },
    #[error("instance too large: |V| = {vocab}, contexts = {contexts}")]
    InstanceTooLarge { vocab: usize, contexts: usize },
    #[error("grid resolution must divide 1 into a whole number of steps")]
    BadGrid,
    #[error("parameter is not identifiable")]
    NonIdentifiable,
    #[error("optimizer diverged at step {0}")]
    OptimizerDiverged(usize),
    #[error("bad experiment configuration: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Identity,
    SymmetricFlip,
    ClassDependent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransitionKind {
    Identity,
    SymmetricFlip(f64),
    ClassDependent,
    DiagonalParam,
    Estimated,
    Custom,
}

/// Row-stochastic `|V| x |V|` matrix; entry `(i, j)` is the probability
/// that clean token `i` is observed as `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    entries: Vec<f64>,
    kind: TransitionKind,
}

impl TransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, NoiseError> {
        let n = rows.len();
        if n == 0 {
            return Err(NoiseError::EmptyData);
        }
        let mut entries = Vec::with_capacity(n * n);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != n {
                return Err(NoiseError::VocabMismatch {
                    left: n,
                    right: r.len(),
                });
            }
            entries.extend(r);
            Self::check_row(&entries[i * n..], i)?;
        }
        Ok(Self {
            n,
            entries,
            kind: TransitionKind::Custom,
        })
    }

    fn check_row(row: &[f64], i: usize) -> Result<(), NoiseError> {
        let ok = row.iter().all(|&v| (0.0..=1.0).contains(&v));
        let sum: f64 = row.iter().sum();
        if !ok || (sum - 1.0).abs() > ROW_TOL {
            return Err(NoiseError::NotRowStochastic { row: i });
        }
        Ok(())
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self {
            n,
            entries,
            kind: TransitionKind::Identity,
        }
    }

    /// Token `i` always becomes `perm[i]`.
    pub fn permutation(perm: &[usize]) -> Result<Self, NoiseError> {
        let n = perm.len();
        let mut seen = vec![false; n];
        let mut entries = vec![0.0; n * n];
        for (i, &j) in perm.iter().enumerate() {
            if j >= n || seen[j] {
                return Err(NoiseError::NotRowStochastic { row: i });
            }
            seen[j] = true;
            entries[i * n + j] = 1.0;
        }
        Ok(Self {
            n,
            entries,
            kind: TransitionKind::Custom,
        })
    }

    /// Keep token `i` with probability `diag[i]`, otherwise flip uniformly
    /// to one of the other tokens.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self, NoiseError> {
        let n = diag.len();
        if n < 2 {
            return Err(NoiseError::EmptyData);
        }
        let mut entries = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            if !(0.0..=1.0).contains(&d) {
                return Err(NoiseError::NotRowStochastic { row: i });
            }
            let off = (1.0 - d) / (n - 1) as f64;
            for j in 0..n {
                entries[i * n + j] = if i == j { d } else { off };
            }
        }
        Ok(Self {
            n,
            entries,
            kind: TransitionKind::DiagonalParam,
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> TransitionKind {
        self.kind
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `Tᵀ b`: the noisy-label distribution when clean labels follow `b`.
    pub fn push_forward(&self, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &bi) in b.iter().enumerate() {
            if bi == 0.0 {
                continue;
            }
            for (o, &t) in out.iter_mut().zip(self.row(i)) {
                *o += t * bi;
            }
        }
        out
    }

    pub fn rank(&self, tol: f64) -> usize {
        linalg::rank(&self.entries, self.n, self.n, tol)
    }

    /// Largest absolute entry difference.
    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Build a noise matrix over the whole vocabulary.
pub fn make_transition(
    kind: NoiseKind,
    strength: f64,
    vocab_size: usize,
    seed: u64,
) -> Result<TransitionMatrix, NoiseError> {
    make_transition_on(kind, strength, vocab_size, 0, seed)
}

/// As [`make_transition`], but ids below `first_noisy` are left untouched
/// and noise moves mass only among ids `first_noisy..vocab_size`. Used to
/// keep BOS, EOS and UNK intact when corrupting a corpus.
///
/// `ClassDependent` rows keep `1 - strength * u` on the diagonal with `u`
/// uniform in `[0.5, 1]`; most of the remaining mass goes to one seeded
/// confuser token and the rest is spread at random.
pub fn make_transition_on(
    kind: NoiseKind,
    strength: f64,
    vocab_size: usize,
    first_noisy: usize,
    seed: u64,
) -> Result<TransitionMatrix, NoiseError> {
    if !(0.0..1.0).contains(&strength) {
        return Err(NoiseError::BadStrength(strength));
    }
    let k = vocab_size.saturating_sub(first_noisy);
    if k < 2 && kind != NoiseKind::Identity {
        return Err(NoiseError::BadConfig("noise needs at least two noisy classes"));
    }
    let mut t = TransitionMatrix::identity(vocab_size);
    let n = vocab_size;
    match kind {
        NoiseKind::Identity => {}
        NoiseKind::SymmetricFlip => {
            let off = strength / (k - 1) as f64;
            for i in first_noisy..n {
                for j in first_noisy..n {
                    t.entries[i * n + j] = if i == j { 1.0 - strength } else { off };
                }
            }
            t.kind = TransitionKind::SymmetricFlip(strength);
        }
        NoiseKind::ClassDependent => {
            let mut rng = Stream::with_stream(seed, 0x6e6f_6973);
            for i in first_noisy..n {
                let off_mass = strength * (0.5 + 0.5 * rng.uniform());
                let mut w: Vec<f64> = (first_noisy..n)
                    .map(|j| if j == i { 0.0 } else { rng.exponential() })
                    .collect();
                let spread: f64 = w.iter().sum();
                let mut confuser = first_noisy + rng.below(k - 1);
                if confuser >= i {
                    confuser += 1;
                }
                for (jj, wj) in w.iter_mut().enumerate() {
                    *wj = 0.3 * *wj / spread;
                    if first_noisy + jj == confuser {
                        *wj += 0.7;
                    }
                }
                for (jj, wj) in w.iter().enumerate() {
                    let j = first_noisy + jj;
                    t.entries[i * n + j] = if j == i { 1.0 - off_mass } else { off_mass * wj };
                }
            }
            t.kind = TransitionKind::ClassDependent;
        }
    }
    for i in 0..n {
        TransitionMatrix::check_row(t.row(i), i)?;
    }
    Ok(t)
}

/// Resample every position independently from its row of `t`.
pub fn corrupt_corpus(
    clean: &[Vec<TokenId>],
    t: &TransitionMatrix,
    seed: u64,
) -> Result<Vec<Vec<TokenId>>, NoiseError> {
    let mut rng = Stream::with_stream(seed, 0x636f_7272);
    clean
        .iter()
        .map(|seq| {
            seq.iter()
                .map(|&x| {
                    let i = x as usize;
                    if i >= t.n {
                        return Err(NoiseError::VocabMismatch {
                            left: t.n,
                            right: i + 1,
                        });
                    }
                    if t.get(i, i) == 1.0 {
                        Ok(x)
                    } else {
                        Ok(rng.categorical(t.row(i)) as TokenId)
                    }
                })
                .collect()
        })
        .collect()
}

/// `-log (Tᵀ b)[target]`, floored.
pub fn forward_corrected_loss(b: &ProbVector, t: &TransitionMatrix, target: TokenId) -> Result<f64, NoiseError> {
    if b.len() != t.n {
        return Err(NoiseError::VocabMismatch {
            left: t.n,
            right: b.len(),
        });
    }
    let j = target as usize;
    if j >= t.n {
        return Err(NoiseError::VocabMismatch {
            left: t.n,
            right: j + 1,
        });
    }
    let q: f64 = (0..t.n).map(|i| t.get(i, j) * b.as_slice()[i]).sum();
    Ok(-q.max(PROB_FLOOR).ln())
}

/// Graph node for `Tᵀ b` applied to every row of `probs` (`n x |V|`).
pub fn corrected_probs(g: &mut Graph, probs: Var, t: &TransitionMatrix) -> Result<Var, AutodiffError> {
    let tm = g.constant(Tensor::matrix(t.n, t.n, t.entries.clone()));
    g.matmul(probs, tm)
}

/// Result of [`estimate_transition`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEstimate {
    pub matrix: TransitionMatrix,
    /// Number of clean samples whose true token is each row's class.
    pub support: Vec<usize>,
}

impl TransitionEstimate {
    /// Rows that had no samples and were set to uniform.
    pub fn unsupported(&self) -> Vec<usize> {
        (0..self.support.len()).filter(|&i| self.support[i] == 0).collect()
    }
}

/// Row `i` is the noisy model's average prediction over clean samples whose
/// true next token is `i`, pooled over all contexts.
pub fn estimate_transition(
    noisy: &dyn LanguageModel,
    clean: &[(Vec<TokenId>, TokenId)],
) -> Result<TransitionEstimate, NoiseError> {
    if clean.is_empty() {
        return Err(NoiseError::EmptyData);
    }
    let n = noisy.vocab_size();
    let mut sums = vec![0.0; n * n];
    let mut support = vec![0usize; n];
    for (ctx, x) in clean {
        let i = *x as usize;
        if i >= n {
            return Err(NoiseError::VocabMismatch { left: n, right: i + 1 });
        }
        let b = noisy.next_token_probs(ctx)?;
        for (s, p) in sums[i * n..(i + 1) * n].iter_mut().zip(b.as_slice()) {
            *s += p;
        }
        support[i] += 1;
    }
    for i in 0..n {
        let row = &mut sums[i * n..(i + 1) * n];
        if support[i] == 0 {
            row.fill(1.0 / n as f64);
        } else {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(TransitionEstimate {
        matrix: TransitionMatrix {
            n,
            entries: sums,
            kind: TransitionKind::Estimated,
        },
        support,
    })
}

/// Context-free reweighter proportional to the positive vector `diag`.
#[allow(non_snake_case)]
pub fn diagonal_reweight_from_T(diag: &[f64]) -> Result<ConstantModel, NoiseError> {
    if diag.is_empty() {
        return Err(NoiseError::EmptyData);
    }
    if let Some(index) = diag.iter().position(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(NoiseError::NonPositive { index });
    }
    let total: f64 = diag.iter().sum();
    let r =
        ProbVector::new(diag.iter().map(|d| d / total).collect()).map_err(|_| NoiseError::NonPositive { index: 0 })?;
    Ok(ConstantModel::new(r))
}

#[cfg(test)]
mod tests;

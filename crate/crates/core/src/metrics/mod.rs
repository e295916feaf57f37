//! Text-generation metrics over token sequences: smoothed BLEU, ROUGE-1/2/L,
//! NIST and CIDEr, plus a report aggregating them over seeds.
//!
//! Conventions:
//! - BLEU is sentence level. Orders with no clipped match use
//!   `(m + 1) / (c + 1)`; the brevity penalty uses the reference length
//!   closest to the candidate, shorter on ties.
//! - ROUGE scores are F1. When neither side has an n-gram of the requested
//!   order the score is 1.
//! - NIST information weights come from the reference corpus; the unigram
//!   prefix count is the corpus word count.
//! - CIDEr is unscaled (no factor of 10) and has no length penalty, so each
//!   order lies in `[0, 1]`.

mod report;

pub use report::{evaluate_all, ExampleScores, MetricReport, MetricRow, METRIC_NAMES};

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no references supplied")]
    EmptyReferences,
    #[error("reference is empty")]
    EmptyReference,
    #[error("CIDEr needs at least two evaluation items, got {0}")]
    CorpusTooSmall(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("max_n must be at least 1")]
    BadOrder,
}

/// Distinct n-grams in first-occurrence order with their counts.
#[derive(Debug, Clone)]
pub(crate) struct NgramCounts<'a, T> {
    pub order: Vec<&'a [T]>,
    pub counts: BTreeMap<&'a [T], usize>,
    pub total: usize,
}

impl<'a, T: Ord> NgramCounts<'a, T> {
    pub fn new(tokens: &'a [T], n: usize) -> Self {
        let mut order = Vec::new();
        let mut counts = BTreeMap::new();
        let mut total = 0;
        if n > 0 && tokens.len() >= n {
            for g in tokens.windows(n) {
                total += 1;
                let c = counts.entry(g).or_insert(0);
                if *c == 0 {
                    order.push(g);
                }
                *c += 1;
            }
        }
        Self { order, counts, total }
    }

    pub fn get(&self, g: &[T]) -> usize {
        self.counts.get(g).copied().unwrap_or(0)
    }
}

fn closest_ref_len<T>(c: usize, references: &[impl AsRef<[T]>]) -> usize {
    references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// Smoothed sentence BLEU with uniform weights over orders `1..=max_n`.
pub fn bleu<T: Ord>(candidate: &[T], references: &[impl AsRef<[T]>], max_n: usize) -> Result<f64, MetricError> {
    if references.is_empty() {
        return Err(MetricError::EmptyReferences);
    }
    if max_n == 0 {
        return Err(MetricError::BadOrder);
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = NgramCounts::new(candidate, n);
        let refs: Vec<NgramCounts<'_, T>> = references.iter().map(|r| NgramCounts::new(r.as_ref(), n)).collect();
        let matched: usize = cand
            .order
            .iter()
            .map(|g| {
                let max_ref = refs.iter().map(|r| r.get(g)).max().unwrap_or(0);
                cand.get(g).min(max_ref)
            })
            .sum();
        let p = if matched == 0 {
            1.0 / (cand.total + 1) as f64
        } else {
            matched as f64 / cand.total as f64
        };
        log_sum += p.ln();
    }
    let r = closest_ref_len(c, references);
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * (log_sum / max_n as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    R1,
    R2,
    RL,
}

fn f1(overlap: usize, cand: usize, reference: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / reference as f64;
    2.0 * p * r / (p + r)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE F1 against a single reference.
pub fn rouge<T: Ord>(candidate: &[T], reference: &[T], variant: RougeVariant) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    match variant {
        RougeVariant::R1 | RougeVariant::R2 => {
            let n = if variant == RougeVariant::R1 { 1 } else { 2 };
            let cand = NgramCounts::new(candidate, n);
            let refc = NgramCounts::new(reference, n);
            if cand.total == 0 && refc.total == 0 {
                return Ok(1.0);
            }
            let overlap: usize = cand.order.iter().map(|g| cand.get(g).min(refc.get(g))).sum();
            Ok(f1(overlap, cand.total, refc.total))
        }
        RougeVariant::RL => Ok(f1(lcs_len(candidate, reference), candidate.len(), reference.len())),
    }
}

/// ROUGE-1 recall, used by the monotonicity property.
pub fn rouge1_recall<T: Ord>(candidate: &[T], reference: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let cand = NgramCounts::new(candidate, 1);
    let refc = NgramCounts::new(reference, 1);
    let overlap: usize = refc.order.iter().map(|g| refc.get(g).min(cand.get(g))).sum();
    Ok(overlap as f64 / refc.total as f64)
}

/// NIST n-gram information weights estimated from a reference corpus.
#[derive(Debug, Clone)]
pub struct NistInfo<T> {
    counts: BTreeMap<Vec<T>, usize>,
    words: usize,
}

impl<T: Ord + Clone> NistInfo<T> {
    pub fn from_corpus(corpus: &[impl AsRef<[T]>], max_n: usize) -> Self {
        let mut counts = BTreeMap::new();
        let mut words = 0;
        for s in corpus {
            let s = s.as_ref();
            words += s.len();
            for n in 1..=max_n {
                if s.len() >= n {
                    for g in s.windows(n) {
                        *counts.entry(g.to_vec()).or_insert(0) += 1;
                    }
                }
            }
        }
        Self { counts, words }
    }

    fn count(&self, g: &[T]) -> usize {
        self.counts.get(g).copied().unwrap_or(0)
    }

    /// `log2(count(prefix) / count(ngram))`; zero for unseen n-grams.
    pub fn info(&self, g: &[T]) -> f64 {
        let c = self.count(g);
        if c == 0 {
            return 0.0;
        }
        let prefix = if g.len() == 1 {
            self.words
        } else {
            self.count(&g[..g.len() - 1])
        };
        (prefix as f64 / c as f64).log2()
    }
}

/// `β` such that the brevity factor is `0.5` at a length ratio of `2/3`.
pub fn nist_beta() -> f64 {
    let l = (2.0f64 / 3.0).ln();
    0.5f64.ln() / (l * l)
}

/// NIST with information weights taken from `references` themselves.
pub fn nist<T: Ord + Clone>(candidate: &[T], references: &[impl AsRef<[T]>], max_n: usize) -> Result<f64, MetricError> {
    let info = NistInfo::from_corpus(references, max_n);
    nist_with(&info, candidate, references, max_n)
}

/// NIST with precomputed information weights.
pub fn nist_with<T: Ord + Clone>(
    info: &NistInfo<T>,
    candidate: &[T],
    references: &[impl AsRef<[T]>],
    max_n: usize,
) -> Result<f64, MetricError> {
    if references.is_empty() {
        return Err(MetricError::EmptyReferences);
    }
    if max_n == 0 {
        return Err(MetricError::BadOrder);
    }
    let mut score = 0.0;
    for n in 1..=max_n {
        let cand = NgramCounts::new(candidate, n);
        if cand.total == 0 {
            continue;
        }
        let refs: Vec<NgramCounts<'_, T>> = references.iter().map(|r| NgramCounts::new(r.as_ref(), n)).collect();
        let mut matched_info = 0.0;
        for g in &cand.order {
            let max_ref = refs.iter().map(|r| r.get(g)).max().unwrap_or(0);
            let m = cand.get(g).min(max_ref);
            if m > 0 {
                matched_info += m as f64 * info.info(g);
            }
        }
        score += matched_info / cand.total as f64;
    }
    let r_bar = references.iter().map(|r| r.as_ref().len()).sum::<usize>() as f64 / references.len() as f64;
    let ratio = (candidate.len() as f64 / r_bar).min(1.0);
    let bp = if ratio <= 0.0 {
        0.0
    } else {
        let l = ratio.ln();
        (nist_beta() * (l * l)).exp()
    };
    Ok(score * bp)
}

/// Unscaled CIDEr averaged over items.
pub fn cider<T: Ord + Clone>(
    candidates: &[impl AsRef<[T]>],
    references: &[Vec<impl AsRef<[T]>>],
    max_n: usize,
) -> Result<f64, MetricError> {
    Ok(cider_per_item(candidates, references, max_n)?.iter().sum::<f64>() / candidates.len() as f64)
}

/// CIDEr of every item.
pub fn cider_per_item<T: Ord + Clone>(
    candidates: &[impl AsRef<[T]>],
    references: &[Vec<impl AsRef<[T]>>],
    max_n: usize,
) -> Result<Vec<f64>, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    let items = candidates.len();
    if items < 2 {
        return Err(MetricError::CorpusTooSmall(items));
    }
    if max_n == 0 {
        return Err(MetricError::BadOrder);
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(MetricError::EmptyReferences);
    }
    let mut scores = alloc::vec![0.0; items];
    for n in 1..=max_n {
        // Document frequency: items whose references contain the n-gram.
        let mut df: BTreeMap<Vec<T>, usize> = BTreeMap::new();
        for refs in references {
            let mut seen: BTreeMap<&[T], ()> = BTreeMap::new();
            for r in refs {
                let r = r.as_ref();
                if r.len() >= n {
                    for g in r.windows(n) {
                        seen.insert(g, ());
                    }
                }
            }
            for g in seen.keys() {
                *df.entry(g.to_vec()).or_insert(0) += 1;
            }
        }
        let idf = |g: &[T]| ((items as f64) / df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
        let vector = |s: &[T]| -> BTreeMap<Vec<T>, f64> {
            let c = NgramCounts::new(s, n);
            c.order
                .iter()
                .map(|g| (g.to_vec(), c.get(g) as f64 / c.total as f64 * idf(g)))
                .collect()
        };
        for (i, (cand, refs)) in candidates.iter().zip(references).enumerate() {
            let cv = vector(cand.as_ref());
            let cnorm = cv.values().map(|v| v * v).sum::<f64>().sqrt();
            let mut sim = 0.0;
            for r in refs {
                let rv = vector(r.as_ref());
                let rnorm = rv.values().map(|v| v * v).sum::<f64>().sqrt();
                if cnorm > 0.0 && rnorm > 0.0 {
                    let dot: f64 = cv.iter().filter_map(|(g, a)| rv.get(g).map(|b| a * b)).sum();
                    sim += dot / (cnorm * rnorm);
                }
            }
            scores[i] += sim / refs.len() as f64 / max_n as f64;
        }
    }
    Ok(scores)
}

#[cfg(test)]
mod tests;

use alloc::vec::Vec;
use num_traits::Float;

use super::{bleu, cider_per_item, nist_with, rouge, MetricError, NistInfo, RougeVariant};

pub const METRIC_NAMES: [&str; 6] = ["bleu", "rouge1", "rouge2", "rougeL", "nist", "cider"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: &'static str,
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleScores {
    pub example: usize,
    pub seed: u64,
    /// Scores in [`METRIC_NAMES`] order.
    pub scores: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub per_example: Vec<ExampleScores>,
}

impl MetricReport {
    pub fn get(&self, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

/// Score every seed's predictions and summarize across seeds.
///
/// `predictions[s][i]` is seed `s`'s output for example `i`. ROUGE takes the
/// best score over an example's references. NIST weights come from the
/// whole reference corpus. The per-seed score of each metric is its mean
/// over examples.
pub fn evaluate_all<T: Ord + Clone>(
    predictions: &[Vec<Vec<T>>],
    references: &[Vec<Vec<T>>],
    seeds: &[u64],
) -> Result<MetricReport, MetricError> {
    if predictions.len() != seeds.len() {
        return Err(MetricError::LengthMismatch {
            left: predictions.len(),
            right: seeds.len(),
        });
    }
    if seeds.is_empty() {
        return Err(MetricError::EmptyReferences);
    }
    let corpus: Vec<&Vec<T>> = references.iter().flatten().collect();
    let info = NistInfo::from_corpus(&corpus, 5);
    let mut per_seed: Vec<[f64; 6]> = Vec::new();
    let mut per_example = Vec::new();
    for (preds, &seed) in predictions.iter().zip(seeds) {
        if preds.len() != references.len() {
            return Err(MetricError::LengthMismatch {
                left: preds.len(),
                right: references.len(),
            });
        }
        let cider = cider_per_item(preds, references, 4)?;
        let mut totals = [0.0; 6];
        for (i, (cand, refs)) in preds.iter().zip(references).enumerate() {
            let best_rouge = |v| -> Result<f64, MetricError> {
                refs.iter().try_fold(0.0f64, |acc, r| Ok(acc.max(rouge(cand, r, v)?)))
            };
            let scores = [
                bleu(cand, refs, 4)?,
                best_rouge(RougeVariant::R1)?,
                best_rouge(RougeVariant::R2)?,
                best_rouge(RougeVariant::RL)?,
                nist_with(&info, cand, refs, 5)?,
                cider[i],
            ];
            for (t, s) in totals.iter_mut().zip(scores) {
                *t += s;
            }
            per_example.push(ExampleScores {
                example: i,
                seed,
                scores,
            });
        }
        per_seed.push(totals.map(|t| t / preds.len() as f64));
    }
    let k = per_seed.len() as f64;
    let rows = METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(m, &metric)| {
            let mean = per_seed.iter().map(|s| s[m]).sum::<f64>() / k;
            let var = per_seed.iter().map(|s| (s[m] - mean).powi(2)).sum::<f64>() / k;
            MetricRow {
                metric,
                mean,
                std: var.sqrt(),
            }
        })
        .collect();
    Ok(MetricReport { rows, per_example })
}

//! CSV writers. Floats use Rust's shortest round-trip formatting, so the
//! same values always produce the same bytes.

use std::path::Path;

use plugin_core::corpus::Vocab;
use plugin_core::decoding::TraceStep;
use plugin_core::metrics::{ExampleScores, METRIC_NAMES};
use plugin_core::noise::DecayReport;
use plugin_core::plugin::TrainHistory;

use crate::error::Result;

pub fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_history(path: &Path, h: &TrainHistory) -> Result<()> {
    write_rows(
        path,
        &["epoch", "train_loss", "hyperval_loss", "is_best"],
        h.epochs.iter().map(|e| {
            vec![
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.hyperval_loss.to_string(),
                (e.epoch == h.best_epoch).to_string(),
            ]
        }),
    )
}

pub fn write_grid(path: &Path, grid: &[(f64, f64, f64)]) -> Result<()> {
    write_rows(
        path,
        &["learning_rate", "weight_decay", "best_hyperval_loss"],
        grid.iter()
            .map(|(l, w, b)| vec![l.to_string(), w.to_string(), b.to_string()]),
    )
}

/// `metric, mean, std` rows.
pub fn write_metrics(path: &Path, rows: &[(&str, f64, f64)]) -> Result<()> {
    write_rows(
        path,
        &["metric", "mean", "std"],
        rows.iter()
            .map(|(m, mean, std)| vec![m.to_string(), mean.to_string(), std.to_string()]),
    )
}

pub fn write_per_example(path: &Path, scores: &[ExampleScores]) -> Result<()> {
    let mut header = vec!["example", "seed"];
    header.extend(METRIC_NAMES);
    write_rows(
        path,
        &header,
        scores.iter().map(|s| {
            let mut r = vec![s.example.to_string(), s.seed.to_string()];
            r.extend(s.scores.iter().map(f64::to_string));
            r
        }),
    )
}

/// One row per method: `mean` and `std` columns for each metric.
pub fn write_table(path: &Path, rows: &[(&str, Vec<(&str, f64, f64)>)]) -> Result<()> {
    let mut header = vec!["method".to_string()];
    for m in METRIC_NAMES {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        path,
        &header,
        rows.iter().map(|(method, cells)| {
            let mut r = vec![method.to_string()];
            for (_, mean, std) in cells {
                r.push(mean.to_string());
                r.push(std.to_string());
            }
            r
        }),
    )
}

pub fn write_decay(path: &Path, rep: &DecayReport) -> Result<()> {
    write_rows(
        path,
        &["t", "mean_excess", "std_excess"],
        rep.mean_excess
            .iter()
            .zip(&rep.std_excess)
            .enumerate()
            .map(|(i, (m, s))| vec![(i + 1).to_string(), m.to_string(), s.to_string()]),
    )
}

pub fn write_trace(path: &Path, prompts: &[(usize, Vec<TraceStep>)], vocab: &Vocab) -> Result<()> {
    write_rows(
        path,
        &["prompt", "step", "token", "p_base", "p_reweight", "p_combined"],
        prompts.iter().flat_map(|(i, steps)| {
            steps.iter().map(move |s| {
                vec![
                    i.to_string(),
                    s.step.to_string(),
                    vocab.token(s.token).unwrap_or("?").to_string(),
                    opt(s.p_base),
                    opt(s.p_reweight),
                    s.p_combined.to_string(),
                ]
            })
        }),
    )
}

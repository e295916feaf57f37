//! The `plugin-lab` verbs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use plugin_core::models::BlackBox;
use plugin_core::TokenId;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, Method};
use crate::data::write_vocab;
use crate::error::{LabError, Result};
use crate::experiments::{noise_sim, shift, theory};
use crate::pipeline::{
    aggregate, check_vocab, evaluate_method, fit_base, freeze_stored, generate_traced, load_task, stored_vocab_size,
    train_methods, vocab_digest, MethodEval, TaskData, Trained,
};
use crate::report::{
    write_decay, write_grid, write_history, write_metrics, write_per_example, write_rows, write_table, write_trace,
};
use crate::run::{per_seed, prepare};

#[derive(Debug, Parser)]
#[command(
    name = "plugin-lab",
    version,
    about = "Train and evaluate reweighting plugins over frozen language models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON experiment config; defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replaces the config's seed list. Repeatable.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Replaces the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replaces the config's method list. Repeatable.
    #[arg(long = "method")]
    pub methods: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Fit the base, then train each method; writes checkpoints and histories.
    Train(Common),
    /// Decode the test prompts with trained checkpoints and score them.
    Eval(Common),
    /// Label-noise simulation: consistency, transition estimate, diagonal plugin.
    NoiseSim(Common),
    /// Excess-loss decay of sequential estimation.
    Theory(Common),
    /// Topic-shift experiment.
    Shift(Common),
    /// Generate from trained checkpoints, with per-step traces.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Prompt text. Repeatable; defaults to the test prompts.
        #[arg(long = "prompt")]
        prompts: Vec<String>,
    },
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if !self.methods.is_empty() {
            cfg.methods = self
                .methods
                .iter()
                .map(|m| Method::parse(m).ok_or_else(|| LabError::config(format!("unknown method {m}"))))
                .collect::<Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Run a parsed command line. Returns the plain-text summary, which is also
/// written under the output directory.
pub fn run(cli: &Cli) -> Result<String> {
    let (name, summary, cfg) = match &cli.verb {
        Verb::Train(c) => {
            let cfg = c.resolve()?;
            ("train", cmd_train(&cfg)?, cfg)
        }
        Verb::Eval(c) => {
            let cfg = c.resolve()?;
            ("eval", cmd_eval(&cfg)?, cfg)
        }
        Verb::NoiseSim(c) => {
            let cfg = c.resolve()?;
            ("noise-sim", cmd_noise_sim(&cfg)?, cfg)
        }
        Verb::Theory(c) => {
            let cfg = c.resolve()?;
            ("theory", cmd_theory(&cfg)?, cfg)
        }
        Verb::Shift(c) => {
            let cfg = c.resolve()?;
            ("shift", cmd_shift(&cfg)?, cfg)
        }
        Verb::Decode { common, prompts } => {
            let cfg = common.resolve()?;
            ("decode", cmd_decode(&cfg, prompts)?, cfg)
        }
    };
    fs::write(cfg.output.join(format!("summary-{name}.txt")), &summary)?;
    Ok(summary)
}

fn ckpt_path(dir: &Path, role: &str) -> PathBuf {
    dir.join(format!("{role}.ckpt"))
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<String> {
    let rows = per_seed(&cfg.seeds, |seed| {
        let dir = prepare(cfg, seed)?;
        let task = load_task(cfg, seed)?;
        let digest = vocab_digest(&task);
        write_vocab(dir.join("vocab.txt"), &task.vocab)?;
        let stored = fit_base(cfg, &task, seed)?;
        Checkpoint {
            role: "base".into(),
            seed,
            vocab_digest: digest,
            scalars: Default::default(),
            model: Some(stored.clone()),
        }
        .save(ckpt_path(&dir, "base"))?;
        let base = freeze_stored(&stored);
        let outcomes = train_methods(cfg, &task, &base, &cfg.methods, seed)?;
        let mut lines = Vec::new();
        for o in outcomes {
            let m = o.trained.method().name();
            if o.trained != Trained::Zeroshot {
                o.trained.to_checkpoint(seed, digest).save(ckpt_path(&dir, m))?;
            }
            if !o.grid.is_empty() {
                write_grid(&dir.join(format!("grid-{m}.csv")), &o.grid)?;
            }
            match &o.history {
                Some(h) => {
                    write_history(&dir.join(format!("history-{m}.csv")), h)?;
                    let best = h.epochs[h.best_epoch].hyperval_loss;
                    lines.push(format!(
                        "seed {seed} {m}: best epoch {} of {}, hyper-validation loss {best:.4}",
                        h.best_epoch,
                        h.epochs.len() - 1
                    ));
                }
                None => lines.push(format!("seed {seed} {m}: nothing to train")),
            }
        }
        Ok(lines)
    })?;
    Ok(rows.concat().join("\n") + "\n")
}

/// The frozen base and a trained method, both checked against the task's
/// vocabulary.
pub fn load_trained(dir: &Path, task: &TaskData, method: Method) -> Result<(BlackBox, Trained)> {
    let base_ckpt = Checkpoint::load(ckpt_path(dir, "base"))?;
    check_vocab(&base_ckpt, task)?;
    let stored = base_ckpt
        .model
        .as_ref()
        .ok_or_else(|| LabError::Runtime("base checkpoint holds no model".into()))?;
    if stored_vocab_size(stored) != task.vocab.len() {
        return Err(LabError::Runtime(
            "base checkpoint vocabulary size differs from the data".into(),
        ));
    }
    let trained = if method == Method::Zeroshot {
        Trained::Zeroshot
    } else {
        let c = Checkpoint::load(ckpt_path(dir, method.name()))?;
        check_vocab(&c, task)?;
        if c.role != method.name() {
            return Err(LabError::Runtime(format!(
                "{}.ckpt holds role {}",
                method.name(),
                c.role
            )));
        }
        Trained::from_checkpoint(&c)?
    };
    Ok((freeze_stored(stored), trained))
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<String> {
    let evals: Vec<Vec<MethodEval>> = per_seed(&cfg.seeds, |seed| {
        let dir = prepare(cfg, seed)?;
        let task = load_task(cfg, seed)?;
        if task.test.is_empty() || task.items.is_empty() {
            return Err(LabError::Runtime("the test set is empty".into()));
        }
        cfg.methods
            .iter()
            .map(|&m| {
                let (base, trained) = load_trained(&dir, &task, m)?;
                let e = evaluate_method(cfg, &task, &base, &trained, seed)?;
                write_per_example(
                    &dir.join(format!("per_example-{}.csv", m.name())),
                    &e.report.per_example,
                )?;
                Ok(e)
            })
            .collect()
    })?;
    let out = &cfg.output;
    let mut table = Vec::new();
    let mut nll_rows = Vec::new();
    let mut summary = String::from("method");
    for name in plugin_core::metrics::METRIC_NAMES {
        let _ = write!(summary, "\t{name}");
    }
    summary.push_str("\ttest_nll\n");
    for (k, &m) in cfg.methods.iter().enumerate() {
        let per_seed: Vec<&MethodEval> = evals.iter().map(|v| &v[k]).collect();
        let reports: Vec<_> = per_seed.iter().map(|e| &e.report).collect();
        let agg = aggregate(&reports);
        write_metrics(&out.join(format!("metrics-{}.csv", m.name())), &agg)?;
        let _ = write!(summary, "{}", m.name());
        for (_, mean, std) in &agg {
            let _ = write!(summary, "\t{mean:.4}±{std:.4}");
        }
        let nlls: Vec<f64> = per_seed.iter().map(|e| e.test_nll).collect();
        let mean = nlls.iter().sum::<f64>() / nlls.len() as f64;
        let _ = writeln!(summary, "\t{mean:.4}");
        for e in &per_seed {
            nll_rows.push(vec![
                m.name().to_string(),
                e.seed.to_string(),
                e.test_nll.to_string(),
                e.kl.map(|k| k.to_string()).unwrap_or_default(),
            ]);
        }
        table.push((m.name(), agg));
    }
    write_table(&out.join("table.csv"), &table)?;
    write_rows(&out.join("nll.csv"), &["method", "seed", "test_nll", "kl"], nll_rows)?;
    Ok(summary)
}

pub fn cmd_noise_sim(cfg: &ExperimentConfig) -> Result<String> {
    let lines = per_seed(&cfg.seeds, |seed| {
        let dir = prepare(cfg, seed)?;
        let r = noise_sim(cfg, seed)?;
        let unsupported = r.support.iter().filter(|&&s| s == 0).count();
        let mut rows = vec![
            ("base_kl", r.base_kl.to_string()),
            ("diag_known_kl", r.diag_known_kl.to_string()),
            ("diag_estimated_kl", r.diag_estimated_kl.to_string()),
            ("plugin_kl", r.plugin_kl.map(|k| k.to_string()).unwrap_or_default()),
            ("oracle_max_error", r.oracle_max_error.to_string()),
            ("peaked_oracle_max_error", r.peaked_oracle_max_error.to_string()),
            ("base_max_error", r.base_max_error.to_string()),
            ("unsupported_rows", unsupported.to_string()),
            ("consistency_distance", r.consistency.distance.to_string()),
            ("consistency_agrees", r.consistency.agrees().to_string()),
            ("identifiable", r.consistency.identifiable.to_string()),
        ];
        rows.retain(|(_, v)| !v.is_empty());
        write_rows(
            &dir.join("noise_summary.csv"),
            &["quantity", "value"],
            rows.iter().map(|(k, v)| vec![k.to_string(), v.clone()]),
        )?;
        let c = &r.consistency;
        write_rows(
            &dir.join("consistency.csv"),
            &["context", "token", "p_star", "clean_argmin", "corrected_argmin"],
            r.p_star.iter().enumerate().flat_map(|(ctx, p)| {
                (0..p.len()).map(move |j| {
                    vec![
                        ctx.to_string(),
                        j.to_string(),
                        p.as_slice()[j].to_string(),
                        c.clean_argmin[ctx][j].to_string(),
                        c.corrected_argmin[ctx][j].to_string(),
                    ]
                })
            }),
        )?;
        let n = r.transition.size();
        write_rows(
            &dir.join("transition.csv"),
            &["row", "col", "true", "oracle_estimate", "base_estimate", "support"],
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| {
                vec![
                    i.to_string(),
                    j.to_string(),
                    r.transition.get(i, j).to_string(),
                    r.oracle_estimate.get(i, j).to_string(),
                    r.base_estimate.get(i, j).to_string(),
                    r.support[i].to_string(),
                ]
            }),
        )?;
        let plugin = r.plugin_kl.map(|k| format!(", plugin {k:.4}")).unwrap_or_default();
        Ok(format!(
            "seed {seed}: KL base {:.4}, diagonal (known T) {:.4}, diagonal (estimated T) {:.4}{plugin}; \
             estimator max error {:.4} (peaked oracle) {:.4} (world oracle) {:.4} (base); consistency {}",
            r.base_kl,
            r.diag_known_kl,
            r.diag_estimated_kl,
            r.peaked_oracle_max_error,
            r.oracle_max_error,
            r.base_max_error,
            if c.agrees() { "agrees" } else { "differs" }
        ))
    })?;
    Ok(lines.join("\n") + "\n")
}

pub fn cmd_theory(cfg: &ExperimentConfig) -> Result<String> {
    let lines = per_seed(&cfg.seeds, |seed| {
        let dir = prepare(cfg, seed)?;
        let r = theory(cfg, seed)?;
        write_decay(&dir.join("decay.csv"), &r.report)?;
        let trials = r.report.per_trial.len();
        write_rows(
            &dir.join("theory_summary.csv"),
            &["quantity", "value"],
            [
                ("slope", r.report.slope.to_string()),
                ("intercept", r.report.intercept.to_string()),
                ("negative_entries", r.report.negative.to_string()),
                ("monotone_trials", r.monotone_trials.to_string()),
                ("trials", trials.to_string()),
            ]
            .map(|(k, v)| vec![k.to_string(), v]),
        )?;
        Ok(format!(
            "seed {seed}: log-log slope {:.3}, {}/{trials} trials non-increasing after smoothing",
            r.report.slope, r.monotone_trials
        ))
    })?;
    Ok(lines.join("\n") + "\n")
}

pub fn cmd_shift(cfg: &ExperimentConfig) -> Result<String> {
    let lines = per_seed(&cfg.seeds, |seed| {
        let dir = prepare(cfg, seed)?;
        let r = shift(cfg, seed)?;
        write_rows(
            &dir.join("shift.csv"),
            &["model", "topic_b", "generations", "fraction", "degenerate"],
            [
                ("base", r.base_b, r.base_fraction()),
                ("plugin", r.plugin_b, r.plugin_fraction()),
            ]
            .map(|(m, b, f)| {
                vec![
                    m.to_string(),
                    b.to_string(),
                    r.generations.to_string(),
                    f.to_string(),
                    r.degenerate.to_string(),
                ]
            }),
        )?;
        let flag = if r.degenerate {
            " (degenerate: adaptation data is no more topic B than the base corpus)"
        } else {
            ""
        };
        Ok(format!(
            "seed {seed}: topic-B share base {:.3}, plugin {:.3}{flag}",
            r.base_fraction(),
            r.plugin_fraction()
        ))
    })?;
    Ok(lines.join("\n") + "\n")
}

pub fn cmd_decode(cfg: &ExperimentConfig, prompts: &[String]) -> Result<String> {
    let lines = per_seed(&cfg.seeds, |seed| {
        let dir = prepare(cfg, seed)?;
        let task = load_task(cfg, seed)?;
        let encoded: Vec<Vec<TokenId>> = if prompts.is_empty() {
            task.items.iter().map(|i| i.prompt.clone()).collect()
        } else {
            prompts.iter().map(|p| task.vocab.encode(p, task.tokenizer)).collect()
        };
        let refs: Vec<&[TokenId]> = encoded.iter().map(Vec::as_slice).collect();
        let dcfg = cfg.decode.to_config(seed);
        let mut lines = Vec::new();
        for &m in &cfg.methods {
            let (base, trained) = load_trained(&dir, &task, m)?;
            let pred = trained.predictor(&base)?;
            let outs = generate_traced(pred.as_ref(), &refs, &dcfg)?;
            let text = |ids: &[TokenId]| {
                let kept: Vec<TokenId> = ids.iter().copied().filter(|&t| t != dcfg.stop_token).collect();
                task.vocab.decode(&kept, task.tokenizer)
            };
            write_rows(
                &dir.join(format!("decode-{}.csv", m.name())),
                &["prompt", "prompt_text", "output"],
                outs.iter()
                    .enumerate()
                    .map(|(i, o)| vec![i.to_string(), text(&encoded[i]), text(&o.tokens)]),
            )?;
            if cfg.decode.trace {
                let traces: Vec<_> = outs.iter().map(|o| o.trace.clone()).enumerate().collect();
                write_trace(&dir.join(format!("trace-{}.csv", m.name())), &traces, &task.vocab)?;
            }
            if let Some(first) = outs.first() {
                lines.push(format!("seed {seed} {}: {}", m.name(), text(&first.tokens)));
            }
        }
        Ok(lines)
    })?;
    Ok(lines.concat().join("\n") + "\n")
}

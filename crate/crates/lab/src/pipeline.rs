//! Data loading, method training, decoding and scoring shared by the CLI
//! verbs and the acceptance experiments.

use std::collections::BTreeMap;

use plugin_core::corpus::{build_vocab, Record, Tokenizer, Vocab, EOS};
use plugin_core::decoding::{decode, DecodeConfig, DecodeOutput};
use plugin_core::metrics::{evaluate_all, MetricReport, METRIC_NAMES};
use plugin_core::models::{fit_ngram, freeze, init_transformer, BlackBox, LanguageModel, TinyTransformer};
use plugin_core::plugin::{
    cross_validate, heldout_nll, select_alpha, train, BasePredictor, NewModel, PluginModel, PluginPredictor, Predictor,
    TemperatureModel, TemperaturePredictor, TrainHistory, Trainable, WeightedCombPredictor,
};
use plugin_core::rng::Stream;
use plugin_core::synth::{generation_items, mean_kl, noisy_benchmark, to_records, GenerationItem, World};
use plugin_core::TokenId;

use crate::checkpoint::{Checkpoint, StoredModel};
use crate::config::{BaseSpec, DataConfig, ExperimentConfig, Method};
use crate::data::{encode_records, load_jsonl, synthetic_vocab};
use crate::error::{LabError, Result};

/// Everything a run needs except the fitted base.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub vocab: Vocab,
    pub tokenizer: Tokenizer,
    /// Sequences the base model is fit on.
    pub base_corpus: Vec<Vec<TokenId>>,
    /// The n-gram already fit by the synthetic generator, when applicable.
    pub fitted_ngram: Option<plugin_core::models::NGramModel>,
    pub train: Vec<Record>,
    pub hyperval: Vec<Record>,
    pub test: Vec<Record>,
    pub items: Vec<GenerationItem>,
    /// Ground truth for synthetic data.
    pub world: Option<World>,
}

pub fn load_task(cfg: &ExperimentConfig, seed: u64) -> Result<TaskData> {
    match &cfg.data {
        DataConfig::Synthetic(s) => {
            let bench = noisy_benchmark(&s.benchmark(&cfg.base), seed)?;
            let items = generation_items(&bench.world, s.items, s.prompt_len, s.references, seed ^ 77);
            Ok(TaskData {
                vocab: synthetic_vocab(s.world.vocab_size),
                tokenizer: Tokenizer::Whitespace,
                base_corpus: bench.noisy_corpus,
                fitted_ngram: Some(bench.base),
                train: bench.train,
                hyperval: bench.hyperval,
                test: bench.test,
                items,
                world: Some(bench.world),
            })
        }
        DataConfig::Jsonl(j) => {
            let tokenizer: Tokenizer = j.tokenizer.into();
            let base_text = load_jsonl(&j.base)?;
            let adapt_text = load_jsonl(&j.adapt)?;
            let test_text = load_jsonl(&j.test)?;
            if adapt_text.len() < 2 {
                return Err(LabError::Runtime("adapt set needs at least two records".into()));
            }
            if test_text.is_empty() {
                return Err(LabError::Runtime("test set is empty".into()));
            }
            let texts: Vec<&str> = base_text
                .iter()
                .chain(&adapt_text)
                .flat_map(|r| [r.prompt.as_str(), r.target.as_str()])
                .collect();
            let vocab = build_vocab(&texts, tokenizer)?;
            let base_corpus = encode_records(&base_text, &vocab, tokenizer)
                .iter()
                .map(Record::tokens)
                .collect();
            let mut adapt = encode_records(&adapt_text, &vocab, tokenizer);
            Stream::with_stream(seed, 0x6164_6170).shuffle(&mut adapt);
            let n_hv = ((adapt.len() as f64 * j.hyperval_fraction).round() as usize).clamp(1, adapt.len() - 1);
            let hyperval = adapt.split_off(adapt.len() - n_hv);
            let test = encode_records(&test_text, &vocab, tokenizer);
            Ok(TaskData {
                items: group_references(&test),
                vocab,
                tokenizer,
                base_corpus,
                fitted_ngram: None,
                train: adapt,
                hyperval,
                test,
                world: None,
            })
        }
    }
}

/// One generation item per distinct prompt, first occurrence order, with
/// every target for that prompt as a reference.
pub fn group_references(test: &[Record]) -> Vec<GenerationItem> {
    let mut order: Vec<Vec<TokenId>> = Vec::new();
    let mut refs: BTreeMap<Vec<TokenId>, Vec<Vec<TokenId>>> = BTreeMap::new();
    for r in test {
        let mut target = r.target.clone();
        target.retain(|&t| t != EOS);
        let entry = refs.entry(r.prompt.clone()).or_insert_with(|| {
            order.push(r.prompt.clone());
            Vec::new()
        });
        entry.push(target);
    }
    order
        .into_iter()
        .map(|prompt| GenerationItem {
            references: refs.remove(&prompt).expect("grouped"),
            prompt,
        })
        .collect()
}

/// Fit the base model named by the config on the task's base corpus.
pub fn fit_base(cfg: &ExperimentConfig, task: &TaskData, seed: u64) -> Result<StoredModel> {
    let v = task.vocab.len();
    match &cfg.base {
        BaseSpec::Ngram { order, lambda } => match &task.fitted_ngram {
            Some(m) => Ok(StoredModel::Ngram(m.clone())),
            None => Ok(StoredModel::Ngram(fit_ngram(&task.base_corpus, *order, *lambda, v)?)),
        },
        BaseSpec::Transformer {
            dims,
            max_epochs,
            learning_rate,
        } => {
            let mut recs = to_records(&task.base_corpus, 0, v);
            let n_hv = (recs.len() / 20).max(1);
            if recs.len() <= n_hv {
                return Err(LabError::Runtime("base corpus too small".into()));
            }
            let hv = recs.split_off(recs.len() - n_hv);
            let model = init_transformer(dims.to_config(v), seed ^ 0xba5e)?;
            let mut tc = cfg.train.to_config(seed);
            tc.max_epochs = *max_epochs;
            tc.learning_rate = *learning_rate;
            let (m, _) = train(NewModel { model }, None, &recs, &hv, &tc)?;
            Ok(StoredModel::Transformer(m.model))
        }
    }
}

pub fn freeze_stored(m: &StoredModel) -> BlackBox {
    match m {
        StoredModel::Ngram(n) => freeze(n.clone()),
        StoredModel::Transformer(t) => freeze(t.clone()),
    }
}

/// A trained method, ready to predict alongside the frozen base.
#[derive(Debug, Clone, PartialEq)]
pub enum Trained {
    Zeroshot,
    NewModel(TinyTransformer),
    WeightedComb { model: TinyTransformer, alpha: f64 },
    TempScale { tau: f64 },
    Plugin(TinyTransformer),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trained: Trained,
    pub history: Option<TrainHistory>,
    /// `(learning_rate, weight_decay, best hyperval loss)` when cross-validated.
    pub grid: Vec<(f64, f64, f64)>,
}

impl Trained {
    pub fn method(&self) -> Method {
        match self {
            Trained::Zeroshot => Method::Zeroshot,
            Trained::NewModel(_) => Method::NewModel,
            Trained::WeightedComb { .. } => Method::WeightedComb,
            Trained::TempScale { .. } => Method::TempScale,
            Trained::Plugin(_) => Method::Plugin,
        }
    }

    pub fn predictor<'a>(&'a self, base: &'a BlackBox) -> Result<Box<dyn Predictor + 'a>> {
        Ok(match self {
            Trained::Zeroshot => Box::new(BasePredictor { base }),
            Trained::NewModel(m) => Box::new(m.clone()),
            Trained::WeightedComb { model, alpha } => Box::new(WeightedCombPredictor::new(base, model, *alpha)?),
            Trained::TempScale { tau } => Box::new(TemperaturePredictor::new(base, *tau)?),
            Trained::Plugin(m) => Box::new(PluginPredictor::new(base, m)?),
        })
    }

    pub fn to_checkpoint(&self, seed: u64, vocab_digest: [u8; 32]) -> Checkpoint {
        let mut scalars = BTreeMap::new();
        let model = match self {
            Trained::Zeroshot => None,
            Trained::NewModel(m) | Trained::Plugin(m) => Some(StoredModel::Transformer(m.clone())),
            Trained::WeightedComb { model, alpha } => {
                scalars.insert("alpha".to_string(), *alpha);
                Some(StoredModel::Transformer(model.clone()))
            }
            Trained::TempScale { tau } => {
                scalars.insert("tau".to_string(), *tau);
                None
            }
        };
        Checkpoint {
            role: self.method().name().to_string(),
            seed,
            vocab_digest,
            scalars,
            model,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let method = Method::parse(&c.role)
            .ok_or_else(|| LabError::Runtime(format!("checkpoint role {} is not a method", c.role)))?;
        Ok(match method {
            Method::Zeroshot => Trained::Zeroshot,
            Method::NewModel => Trained::NewModel(c.transformer()?.clone()),
            Method::Plugin => Trained::Plugin(c.transformer()?.clone()),
            Method::WeightedComb => Trained::WeightedComb {
                model: c.transformer()?.clone(),
                alpha: c.scalar("alpha")?,
            },
            Method::TempScale => Trained::TempScale { tau: c.scalar("tau")? },
        })
    }
}

fn fit<M: Trainable>(
    cfg: &ExperimentConfig,
    base: Option<&BlackBox>,
    factory: impl Fn() -> M,
    task: &TaskData,
    lr: Option<f64>,
    seed: u64,
) -> Result<(M, TrainHistory, Vec<(f64, f64, f64)>)> {
    let mut tc = cfg.train.to_config(seed);
    if let Some(lr) = lr {
        tc.learning_rate = lr;
    }
    if cfg.train.cross_validate && lr.is_none() {
        let cv = cross_validate(base, factory, &task.train, &task.hyperval, &tc)?;
        Ok((cv.model, cv.history, cv.grid))
    } else {
        let (m, h) = train(factory(), base, &task.train, &task.hyperval, &tc)?;
        Ok((m, h, Vec::new()))
    }
}

/// Train the requested methods in order. NewModel and WeightedComb share
/// one trained new model.
pub fn train_methods(
    cfg: &ExperimentConfig,
    task: &TaskData,
    base: &BlackBox,
    methods: &[Method],
    seed: u64,
) -> Result<Vec<TrainOutcome>> {
    let v = task.vocab.len();
    let rw_cfg = cfg.reweighter.to_config(v);
    let mut new_model: Option<(TinyTransformer, TrainHistory, Vec<(f64, f64, f64)>)> = None;
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let outcome = match method {
            Method::Zeroshot => TrainOutcome {
                trained: Trained::Zeroshot,
                history: None,
                grid: Vec::new(),
            },
            Method::Plugin => {
                let init = init_transformer(rw_cfg, seed)?;
                let (m, h, grid) = fit(
                    cfg,
                    Some(base),
                    || PluginModel {
                        reweighter: init.clone(),
                    },
                    task,
                    None,
                    seed,
                )?;
                TrainOutcome {
                    trained: Trained::Plugin(m.reweighter),
                    history: Some(h),
                    grid,
                }
            }
            Method::NewModel | Method::WeightedComb => {
                if new_model.is_none() {
                    // a different init stream from the reweighter
                    let init = init_transformer(rw_cfg, seed + 100)?;
                    let (m, h, grid) = fit(cfg, None, || NewModel { model: init.clone() }, task, None, seed)?;
                    new_model = Some((m.model, h, grid));
                }
                let (m, h, grid) = new_model.clone().expect("trained above");
                let trained = if method == Method::NewModel {
                    Trained::NewModel(m)
                } else {
                    let (alpha, _) = select_alpha(base, &m, &task.hyperval, &cfg.train.alphas, cfg.train.scope())?;
                    Trained::WeightedComb { model: m, alpha }
                };
                TrainOutcome {
                    trained,
                    history: Some(h),
                    grid,
                }
            }
            Method::TempScale => {
                let lr = Some(cfg.train.tempscale_learning_rate);
                let (m, h, _) = fit(cfg, Some(base), || TemperatureModel::new(v), task, lr, seed)?;
                TrainOutcome {
                    trained: Trained::TempScale { tau: m.tau() },
                    history: Some(h),
                    grid: Vec::new(),
                }
            }
        };
        out.push(outcome);
    }
    Ok(out)
}

/// Decode every prompt, keeping the per-step traces. Prompt `i` seeds its
/// sampler from `cfg.seed` and `i`.
pub fn generate_traced(pred: &dyn Predictor, prompts: &[&[TokenId]], cfg: &DecodeConfig) -> Result<Vec<DecodeOutput>> {
    prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = DecodeConfig {
                seed: cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                ..*cfg
            };
            Ok(decode(pred, p, &c)?)
        })
        .collect()
}

/// Decode every prompt; EOS is dropped from the outputs.
pub fn generate(pred: &dyn Predictor, prompts: &[&[TokenId]], cfg: &DecodeConfig) -> Result<Vec<Vec<TokenId>>> {
    Ok(generate_traced(pred, prompts, cfg)?
        .into_iter()
        .map(|o| o.tokens.into_iter().filter(|&t| t != cfg.stop_token).collect())
        .collect())
}

#[derive(Debug, Clone)]
pub struct MethodEval {
    pub method: Method,
    pub seed: u64,
    pub test_nll: f64,
    /// Mean KL from the ground-truth world, synthetic data only.
    pub kl: Option<f64>,
    pub outputs: Vec<Vec<TokenId>>,
    pub report: MetricReport,
}

pub fn evaluate_method(
    cfg: &ExperimentConfig,
    task: &TaskData,
    base: &BlackBox,
    trained: &Trained,
    seed: u64,
) -> Result<MethodEval> {
    let pred = trained.predictor(base)?;
    let test_nll = heldout_nll(pred.as_ref(), &task.test, cfg.train.scope())?;
    let kl = match &task.world {
        Some(w) => Some(mean_kl(w, pred.as_ref(), &task.test)?),
        None => None,
    };
    let prompts: Vec<&[TokenId]> = task.items.iter().map(|i| i.prompt.as_slice()).collect();
    let outputs = generate(pred.as_ref(), &prompts, &cfg.decode.to_config(seed))?;
    let refs: Vec<Vec<Vec<TokenId>>> = task.items.iter().map(|i| i.references.clone()).collect();
    let report = evaluate_all(std::slice::from_ref(&outputs), &refs, &[seed])?;
    Ok(MethodEval {
        method: trained.method(),
        seed,
        test_nll,
        kl,
        outputs,
        report,
    })
}

/// Mean and population std of each metric over per-seed reports.
pub fn aggregate(reports: &[&MetricReport]) -> Vec<(&'static str, f64, f64)> {
    METRIC_NAMES
        .iter()
        .map(|&name| {
            let xs: Vec<f64> = reports
                .iter()
                .map(|r| r.get(name).map_or(f64::NAN, |m| m.mean))
                .collect();
            let n = xs.len().max(1) as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (name, mean, var.sqrt())
        })
        .collect()
}

/// Vocabulary digest recorded in checkpoints.
pub fn vocab_digest(task: &TaskData) -> [u8; 32] {
    task.vocab.digest()
}

/// Reject a checkpoint trained against another vocabulary.
pub fn check_vocab(c: &Checkpoint, task: &TaskData) -> Result<()> {
    if c.vocab_digest != vocab_digest(task) {
        return Err(LabError::Runtime(format!(
            "checkpoint {} was trained with a different vocabulary",
            c.role
        )));
    }
    Ok(())
}

pub fn stored_vocab_size(m: &StoredModel) -> usize {
    match m {
        StoredModel::Ngram(n) => n.vocab_size(),
        StoredModel::Transformer(t) => t.vocab_size(),
    }
}

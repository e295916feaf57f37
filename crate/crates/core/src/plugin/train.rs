//! Training loop shared by the plugin reweighter and the baselines.
//!
//! One epoch is a seeded shuffle of the training examples, cut into batches.
//! Each batch is padded with EOS to its longest sequence; padded positions
//! carry zero weight. The batch loss is the mean over sequences of each
//! sequence's mean token loss. Parameters follow Adam with decoupled weight
//! decay under a linear warmup then linear decay to zero over the planned
//! `max_epochs`. After every epoch the hyper-validation loss decides early
//! stopping, and the parameters of the best epoch are returned.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use super::{same_vocab, PluginError};
use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::{Record, BOS, EOS};
use crate::models::{BlackBox, ParamSet, TinyTransformer};
use crate::rng::Stream;
use crate::{TokenId, PROB_FLOOR};

/// Which positions of `prompt ++ target` contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossScope {
    #[default]
    TargetOnly,
    FullSequence,
}

impl LossScope {
    pub fn first_scored(self, record: &Record) -> usize {
        match self {
            LossScope::TargetOnly => record.prompt.len(),
            LossScope::FullSequence => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_fraction: f64,
    pub patience: usize,
    pub grid_learning_rates: Vec<f64>,
    pub grid_weight_decays: Vec<f64>,
    pub seed: u64,
    pub loss_scope: LossScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            batch_size: 16,
            max_epochs: 30,
            warmup_fraction: 0.1,
            patience: 5,
            grid_learning_rates: vec![1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3],
            grid_weight_decays: vec![0.01, 0.1, 1.0, 10.0],
            seed: 0,
            loss_scope: LossScope::TargetOnly,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PluginError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PluginError::BadConfig("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(PluginError::BadConfig("weight_decay must be non-negative"));
        }
        if self.patience == 0 {
            return Err(PluginError::BadConfig("patience must be at least 1"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(PluginError::BadConfig("batch_size and max_epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(PluginError::BadConfig("warmup_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub hyperval_loss: f64,
}

/// Per-epoch losses. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best_hyperval_loss(&self) -> f64 {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map_or(f64::INFINITY, |e| e.hyperval_loss)
    }

    pub fn last_epoch(&self) -> usize {
        self.epochs.last().map_or(0, |e| e.epoch)
    }
}

/// Stop once the monitored loss has not decreased for `patience`
/// consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Record an epoch; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

/// Epoch driver independent of what is being trained: `step` runs one
/// training epoch and returns its mean loss, `eval_train` and `eval_hyper`
/// score the current model.
pub(crate) fn run_epochs<M: Clone, E>(
    mut model: M,
    max_epochs: usize,
    patience: usize,
    mut step: impl FnMut(&mut M, usize) -> Result<f64, E>,
    mut eval_train: impl FnMut(&M) -> Result<f64, E>,
    mut eval_hyper: impl FnMut(&M) -> Result<f64, E>,
) -> Result<(M, TrainHistory), E> {
    let mut stopper = EarlyStopping::new(patience);
    let mut history = TrainHistory::default();
    let initial = eval_hyper(&model)?;
    history.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: eval_train(&model)?,
        hyperval_loss: initial,
    });
    stopper.observe(0, initial);
    let mut best = model.clone();
    for epoch in 1..=max_epochs {
        let train_loss = step(&mut model, epoch)?;
        let hyperval_loss = eval_hyper(&model)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            hyperval_loss,
        });
        if stopper.observe(epoch, hyperval_loss) {
            best = model.clone();
        }
        if stopper.should_stop() {
            history.stopped_early = epoch < max_epochs;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok((best, history))
}

/// A prepared training sequence with cached frozen-model probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<TokenId>,
    pub first_scored: usize,
    /// `tokens.len() x vocab` row-major, floored base probabilities.
    pub base: Option<Vec<f64>>,
}

impl Example {
    pub fn prepare(records: &[Record], base: Option<&BlackBox>, scope: LossScope) -> Result<Vec<Example>, PluginError> {
        records
            .iter()
            .map(|r| {
                let tokens = r.tokens();
                let base = match base {
                    Some(bb) => Some(
                        bb.sequence_probs(&tokens)?
                            .into_iter()
                            .flat_map(|p| p.into_vec().into_iter().map(|v| v.max(PROB_FLOOR)))
                            .collect(),
                    ),
                    None => None,
                };
                Ok(Example {
                    first_scored: scope.first_scored(r).min(tokens.len() - 1),
                    tokens,
                    base,
                })
            })
            .collect()
    }
}

/// Padded batch handed to [`Trainable::batch_probs`].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `batch * len` inputs: BOS followed by the sequence shifted right.
    pub inputs: Vec<TokenId>,
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
    /// `batch * len * vocab` base probabilities, uniform on padding.
    pub base: Option<Vec<f64>>,
    pub batch: usize,
    pub len: usize,
    pub vocab: usize,
}

impl Batch {
    pub fn assemble(examples: &[&Example], vocab: usize) -> Self {
        let batch = examples.len();
        let len = examples.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
        let mut inputs = vec![EOS; batch * len];
        let mut targets = vec![EOS as usize; batch * len];
        let mut weights = vec![0.0; batch * len];
        let with_base = examples.iter().all(|e| e.base.is_some());
        let mut base = with_base.then(|| vec![1.0 / vocab as f64; batch * len * vocab]);
        for (b, e) in examples.iter().enumerate() {
            let m = e.tokens.len();
            let scored = (m - e.first_scored) as f64;
            for i in 0..m {
                let row = b * len + i;
                inputs[row] = if i == 0 { BOS } else { e.tokens[i - 1] };
                targets[row] = e.tokens[i] as usize;
                if i >= e.first_scored {
                    weights[row] = 1.0 / (scored * batch as f64);
                }
            }
            if let (Some(dst), Some(src)) = (base.as_mut(), e.base.as_ref()) {
                dst[b * len * vocab..(b * len + m) * vocab].copy_from_slice(src);
            }
        }
        Self {
            inputs,
            targets,
            weights,
            base,
            batch,
            len,
            vocab,
        }
    }
}

/// Something the shared loop can fit.
pub trait Trainable: Clone {
    fn vocab_size(&self) -> usize;

    /// Whether [`Trainable::batch_probs`] needs cached base probabilities.
    fn uses_base(&self) -> bool;

    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// Per-position distribution to score, a `(batch * len) x vocab` node.
    fn batch_probs(&self, g: &mut Graph, vars: &[Var], batch: &Batch) -> Result<Var, PluginError>;
}

fn base_constant(g: &mut Graph, batch: &Batch) -> Result<Var, PluginError> {
    let base = batch
        .base
        .as_ref()
        .ok_or(PluginError::BadConfig("objective needs base probabilities"))?;
    Ok(g.constant(Tensor::matrix(batch.batch * batch.len, batch.vocab, base.clone())))
}

/// Reweighter combined with the frozen base: `normalize(b ⊙ softmax(z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluginModel {
    pub reweighter: TinyTransformer,
}

impl Trainable for PluginModel {
    fn vocab_size(&self) -> usize {
        self.reweighter.config().vocab_size
    }

    fn uses_base(&self) -> bool {
        true
    }

    fn params(&self) -> &ParamSet {
        self.reweighter.params()
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.reweighter.params_mut()
    }

    fn batch_probs(&self, g: &mut Graph, vars: &[Var], batch: &Batch) -> Result<Var, PluginError> {
        let logits = self
            .reweighter
            .forward(g, vars, &batch.inputs, batch.batch, batch.len)?;
        let r = g.softmax(logits)?;
        let r = g.clamp_min(r, PROB_FLOOR);
        let b = base_constant(g, batch)?;
        let prod = g.mul(b, r)?;
        Ok(g.normalize_rows(prod)?)
    }
}

/// A transformer trained on its own, without the base.
#[derive(Debug, Clone, PartialEq)]
pub struct NewModel {
    pub model: TinyTransformer,
}

impl Trainable for NewModel {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn uses_base(&self) -> bool {
        false
    }

    fn params(&self) -> &ParamSet {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.model.params_mut()
    }

    fn batch_probs(&self, g: &mut Graph, vars: &[Var], batch: &Batch) -> Result<Var, PluginError> {
        let logits = self.model.forward(g, vars, &batch.inputs, batch.batch, batch.len)?;
        Ok(g.softmax(logits)?)
    }
}

/// One learned temperature applied to the base log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureModel {
    vocab_size: usize,
    params: ParamSet,
}

impl TemperatureModel {
    /// Starts at `tau = 1`.
    pub fn new(vocab_size: usize) -> Self {
        let mut params = ParamSet::new();
        params.push("log_tau", Tensor::scalar(0.0));
        Self { vocab_size, params }
    }

    pub fn with_tau(vocab_size: usize, tau: f64) -> Self {
        let mut m = Self::new(vocab_size);
        m.params.tensor_at_mut(0).data_mut()[0] = tau.ln();
        m
    }

    pub fn tau(&self) -> f64 {
        self.params.tensor_at(0).item().exp()
    }
}

impl Trainable for TemperatureModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn uses_base(&self) -> bool {
        true
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn batch_probs(&self, g: &mut Graph, vars: &[Var], batch: &Batch) -> Result<Var, PluginError> {
        let b = base_constant(g, batch)?;
        let log_b = g.log(b);
        let neg = g.scale(vars[0], -1.0);
        let inv_tau = g.exp(neg);
        let z = g.scale_by(log_b, inv_tau)?;
        Ok(g.softmax(z)?)
    }
}

/// Weighted negative log-likelihood of the batch targets under `probs`.
pub fn batch_loss(g: &mut Graph, probs: Var, batch: &Batch) -> Result<Var, PluginError> {
    let picked = g.pick(probs, &batch.targets)?;
    let logs = g.log(picked);
    let w = g.constant(Tensor::vector(batch.weights.clone()));
    let weighted = g.mul(logs, w)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, -1.0))
}

const EVAL_CHUNK: usize = 64;

/// Mean per-sequence loss over `examples` without building gradients.
fn evaluate<M: Trainable>(model: &M, examples: &[Example]) -> Result<f64, PluginError> {
    let mut total = 0.0;
    for chunk in examples.chunks(EVAL_CHUNK) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = Batch::assemble(&refs, model.vocab_size());
        let mut g = Graph::new();
        let vars: Vec<Var> = model.params().iter().map(|(_, t)| g.constant(t.clone())).collect();
        let probs = model.batch_probs(&mut g, &vars, &batch)?;
        let loss = batch_loss(&mut g, probs, &batch)?;
        total += g.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    fn new(params: &ParamSet, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in params.tensors_mut().enumerate() {
            let g = grads[i].data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *w -= lr * (update + self.weight_decay * *w);
            }
        }
    }
}

/// Learning rate at optimizer step `step` (0-based) of `total`.
pub(crate) fn scheduled_lr(base: f64, step: usize, total: usize, warmup: usize) -> f64 {
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        base * (total - step) as f64 / (total - warmup).max(1) as f64
    }
}

/// Fit `model` on `train`, early-stopping on `hyperval`.
pub fn train<M: Trainable>(
    model: M,
    base: Option<&BlackBox>,
    train: &[Record],
    hyperval: &[Record],
    cfg: &TrainConfig,
) -> Result<(M, TrainHistory), PluginError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(PluginError::EmptySplit("train"));
    }
    if hyperval.is_empty() {
        return Err(PluginError::EmptySplit("hyperval"));
    }
    let base = if model.uses_base() {
        let bb = base.ok_or(PluginError::BadConfig("objective needs a base model"))?;
        same_vocab(bb, model.vocab_size())?;
        Some(bb)
    } else {
        None
    };
    let train_ex = Example::prepare(train, base, cfg.loss_scope)?;
    let hyper_ex = Example::prepare(hyperval, base, cfg.loss_scope)?;

    let batches_per_epoch = train_ex.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.max_epochs;
    let warmup = (cfg.warmup_fraction * total_steps as f64).floor() as usize;
    let mut adam = AdamW::new(model.params(), cfg.weight_decay);
    let mut rng = Stream::with_stream(cfg.seed, 0x7261_696e);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut global_step = 0;

    run_epochs(
        model,
        cfg.max_epochs,
        cfg.patience,
        |m: &mut M, _epoch| {
            rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let refs: Vec<&Example> = chunk.iter().map(|&i| &train_ex[i]).collect();
                let batch = Batch::assemble(&refs, m.vocab_size());
                let mut g = Graph::new();
                let vars: Vec<Var> = m.params().iter().map(|(n, t)| g.param(n, t.clone())).collect();
                let probs = m.batch_probs(&mut g, &vars, &batch)?;
                let loss = batch_loss(&mut g, probs, &batch)?;
                epoch_loss += g.value(loss).item() * chunk.len() as f64;
                let grads = g.backward(loss)?.into_tensors();
                let lr = scheduled_lr(cfg.learning_rate, global_step, total_steps, warmup);
                adam.step(m.params_mut(), &grads, lr);
                global_step += 1;
            }
            Ok(epoch_loss / train_ex.len() as f64)
        },
        |m| evaluate(m, &train_ex),
        |m| evaluate(m, &hyper_ex),
    )
}

/// Train a reweighter against a frozen base.
pub fn train_plugin(
    blackbox: &BlackBox,
    reweighter: TinyTransformer,
    train_split: &[Record],
    hyperval: &[Record],
    cfg: &TrainConfig,
) -> Result<(TinyTransformer, TrainHistory), PluginError> {
    let (m, h) = train(PluginModel { reweighter }, Some(blackbox), train_split, hyperval, cfg)?;
    Ok((m.reweighter, h))
}

/// Result of [`cross_validate`].
#[derive(Debug, Clone)]
pub struct CvOutcome<M> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub model: M,
    pub history: TrainHistory,
    /// `(learning_rate, weight_decay, best hyperval loss)` per grid point.
    pub grid: Vec<(f64, f64, f64)>,
}

/// Train one model per `(learning_rate, weight_decay)` grid point and keep
/// the lowest best-epoch hyperval loss. Ties go to the smaller learning rate,
/// then the smaller weight decay.
pub fn cross_validate<M: Trainable>(
    base: Option<&BlackBox>,
    factory: impl Fn() -> M,
    train_split: &[Record],
    hyperval: &[Record],
    cfg: &TrainConfig,
) -> Result<CvOutcome<M>, PluginError> {
    if cfg.grid_learning_rates.is_empty() || cfg.grid_weight_decays.is_empty() {
        return Err(PluginError::BadConfig("cross-validation grids must be non-empty"));
    }
    let mut lrs = cfg.grid_learning_rates.clone();
    let mut wds = cfg.grid_weight_decays.clone();
    lrs.sort_by(f64::total_cmp);
    wds.sort_by(f64::total_cmp);
    let mut best: Option<CvOutcome<M>> = None;
    let mut grid = Vec::new();
    for &lr in &lrs {
        for &wd in &wds {
            let point = TrainConfig {
                learning_rate: lr,
                weight_decay: wd,
                ..cfg.clone()
            };
            let (model, history) = train(factory(), base, train_split, hyperval, &point)?;
            let loss = history.best_hyperval_loss();
            grid.push((lr, wd, loss));
            if best.as_ref().is_none_or(|b| loss < b.history.best_hyperval_loss()) {
                best = Some(CvOutcome {
                    learning_rate: lr,
                    weight_decay: wd,
                    model,
                    history,
                    grid: Vec::new(),
                });
            }
        }
    }
    let mut out = best.expect("non-empty grid");
    out.grid = grid;
    Ok(out)
}

/// Pick the mixing weight with the lowest hyperval NLL; ties go to the
/// smaller alpha.
pub fn select_alpha(
    base: &BlackBox,
    new_model: &dyn crate::models::LanguageModel,
    hyperval: &[Record],
    alphas: &[f64],
    scope: LossScope,
) -> Result<(f64, f64), PluginError> {
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (f64::NAN, f64::INFINITY);
    for &a in &sorted {
        let pred = super::WeightedCombPredictor::new(base, new_model, a)?;
        let nll = super::heldout_nll(&pred, hyperval, scope)?;
        if nll < best.1 {
            best = (a, nll);
        }
    }
    if best.0.is_nan() {
        return Err(PluginError::BadConfig("alpha grid must be non-empty"));
    }
    Ok(best)
}

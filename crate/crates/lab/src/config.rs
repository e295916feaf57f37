//! The experiment configuration: one versioned JSON document.
//!
//! Every section except `version` has defaults, so `{"version": 1}` is a
//! complete config that runs the synthetic benchmark.

use std::path::{Path, PathBuf};

use plugin_core::corpus::Tokenizer;
use plugin_core::decoding::{DecodeConfig, Strategy};
use plugin_core::models::TransformerConfig;
use plugin_core::noise::{DecayConfig, NoiseKind, ObservationNoise};
use plugin_core::plugin::{LossScope, TrainConfig};
use plugin_core::synth::{NoisyBenchmarkConfig, ShiftConfig, WorldConfig};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Zeroshot,
    NewModel,
    WeightedComb,
    TempScale,
    Plugin,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Zeroshot,
        Method::NewModel,
        Method::WeightedComb,
        Method::TempScale,
        Method::Plugin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Zeroshot => "zeroshot",
            Method::NewModel => "newmodel",
            Method::WeightedComb => "weightedcomb",
            Method::TempScale => "tempscale",
            Method::Plugin => "plugin",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseName {
    Identity,
    SymmetricFlip,
    ClassDependent,
}

impl From<NoiseName> for NoiseKind {
    fn from(n: NoiseName) -> Self {
        match n {
            NoiseName::Identity => NoiseKind::Identity,
            NoiseName::SymmetricFlip => NoiseKind::SymmetricFlip,
            NoiseName::ClassDependent => NoiseKind::ClassDependent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerName {
    Whitespace,
    Character,
}

impl From<TokenizerName> for Tokenizer {
    fn from(t: TokenizerName) -> Self {
        match t {
            TokenizerName::Whitespace => Tokenizer::Whitespace,
            TokenizerName::Character => Tokenizer::Character,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub vocab_size: usize,
    pub successors: usize,
    pub heavy_mass: f64,
    pub eos_prob: f64,
    pub terminal_fraction: f64,
    pub terminal_eos: f64,
    pub max_len: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self::from(&WorldConfig::default())
    }
}

impl From<&WorldConfig> for WorldSpec {
    fn from(w: &WorldConfig) -> Self {
        Self {
            vocab_size: w.vocab_size,
            successors: w.successors,
            heavy_mass: w.heavy_mass,
            eos_prob: w.eos_prob,
            terminal_fraction: w.terminal_fraction,
            terminal_eos: w.terminal_eos,
            max_len: w.max_len,
        }
    }
}

impl WorldSpec {
    pub fn to_config(&self) -> WorldConfig {
        WorldConfig {
            vocab_size: self.vocab_size,
            successors: self.successors,
            heavy_mass: self.heavy_mass,
            eos_prob: self.eos_prob,
            terminal_fraction: self.terminal_fraction,
            terminal_eos: self.terminal_eos,
            max_len: self.max_len,
        }
    }
}

/// Seeded world, noisy base corpus, clean splits and generation items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticData {
    pub world: WorldSpec,
    pub noise: NoiseName,
    pub noise_strength: f64,
    pub base_corpus: usize,
    pub train: usize,
    pub hyperval: usize,
    pub test: usize,
    pub prompt_len: usize,
    /// Generation prompts scored by the text metrics.
    pub items: usize,
    /// Sampled references per generation prompt.
    pub references: usize,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            noise: NoiseName::ClassDependent,
            noise_strength: 0.8,
            base_corpus: 20_000,
            train: 100,
            hyperval: 100,
            test: 100,
            prompt_len: 2,
            items: 400,
            references: 10,
        }
    }
}

impl SyntheticData {
    pub fn benchmark(&self, base: &BaseSpec) -> NoisyBenchmarkConfig {
        let (order, lambda) = match base {
            BaseSpec::Ngram { order, lambda } => (*order, *lambda),
            // the n-gram is fit anyway and then ignored
            BaseSpec::Transformer { .. } => (2, 0.1),
        };
        NoisyBenchmarkConfig {
            world: self.world.to_config(),
            noise: self.noise.into(),
            noise_strength: self.noise_strength,
            base_corpus: self.base_corpus,
            ngram_order: order,
            ngram_lambda: lambda,
            train: self.train,
            hyperval: self.hyperval,
            test: self.test,
            prompt_len: self.prompt_len,
        }
    }
}

/// Datasets on disk. `base` trains the base model, `adapt` is the small
/// task set (split into train and hyperval), `test` is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlData {
    pub base: PathBuf,
    pub adapt: PathBuf,
    pub test: PathBuf,
    #[serde(default = "default_tokenizer")]
    pub tokenizer: TokenizerName,
    #[serde(default = "default_hyperval_fraction")]
    pub hyperval_fraction: f64,
}

fn default_tokenizer() -> TokenizerName {
    TokenizerName::Whitespace
}

fn default_hyperval_fraction() -> f64 {
    0.4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataConfig {
    Synthetic(SyntheticData),
    Jsonl(JsonlData),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticData::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub num_blocks: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub context_window: usize,
    pub init_scale: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self::from_config(&TransformerConfig::small(2, 16))
    }
}

impl ModelDims {
    pub fn to_config(&self, vocab_size: usize) -> TransformerConfig {
        TransformerConfig {
            vocab_size,
            num_blocks: self.num_blocks,
            embed_dim: self.embed_dim,
            num_heads: self.num_heads,
            ff_dim: self.ff_dim,
            context_window: self.context_window,
            init_scale: self.init_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BaseSpec {
    Ngram {
        order: usize,
        lambda: f64,
    },
    Transformer {
        dims: ModelDims,
        max_epochs: usize,
        learning_rate: f64,
    },
}

impl Default for BaseSpec {
    fn default() -> Self {
        BaseSpec::Ngram { order: 2, lambda: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeName {
    TargetOnly,
    FullSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_fraction: f64,
    pub patience: usize,
    pub grid_learning_rates: Vec<f64>,
    pub grid_weight_decays: Vec<f64>,
    pub loss_scope: ScopeName,
    /// Pick learning rate and weight decay on hyperval over the grids.
    pub cross_validate: bool,
    pub tempscale_learning_rate: f64,
    pub alphas: Vec<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            learning_rate: 5e-3,
            weight_decay: c.weight_decay,
            batch_size: 32,
            max_epochs: 20,
            warmup_fraction: c.warmup_fraction,
            patience: c.patience,
            grid_learning_rates: c.grid_learning_rates,
            grid_weight_decays: c.grid_weight_decays,
            loss_scope: ScopeName::TargetOnly,
            cross_validate: false,
            tempscale_learning_rate: 5e-2,
            alphas: vec![0.25, 0.5, 0.75],
        }
    }
}

impl TrainSettings {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            warmup_fraction: self.warmup_fraction,
            patience: self.patience,
            grid_learning_rates: self.grid_learning_rates.clone(),
            grid_weight_decays: self.grid_weight_decays.clone(),
            seed,
            loss_scope: self.scope(),
        }
    }

    pub fn scope(&self) -> LossScope {
        match self.loss_scope {
            ScopeName::TargetOnly => LossScope::TargetOnly,
            ScopeName::FullSequence => LossScope::FullSequence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategySpec {
    Greedy,
    Temperature(f64),
    TopP { p: f64, temperature: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSettings {
    pub max_len: usize,
    pub strategy: StrategySpec,
    /// Write per-step probability traces from the `decode` verb.
    pub trace: bool,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        Self {
            max_len: 12,
            strategy: StrategySpec::Greedy,
            trace: true,
        }
    }
}

impl DecodeSettings {
    pub fn to_config(&self, seed: u64) -> DecodeConfig {
        let strategy = match self.strategy {
            StrategySpec::Greedy => Strategy::Greedy,
            StrategySpec::Temperature(t) => Strategy::Temperature(t),
            StrategySpec::TopP { p, temperature } => Strategy::TopP(p, temperature),
        };
        DecodeConfig {
            max_len: self.max_len,
            strategy,
            seed,
            ..DecodeConfig::default()
        }
    }
}

/// Settings for the `noise-sim` verb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSimSettings {
    pub world: WorldSpec,
    pub kind: NoiseName,
    pub strength: f64,
    pub base_corpus: usize,
    /// Clean sequences for the estimator and the trained reweighter.
    pub clean: usize,
    pub hyperval: usize,
    pub test: usize,
    pub consistency_vocab: usize,
    pub consistency_contexts: usize,
    pub grid_resolution: f64,
    /// Probability of the designated successor in the estimator check's
    /// oracle world; 1 makes the next token a function of the context.
    pub oracle_dominant: f64,
    pub oracle_samples: usize,
    /// Also train a transformer reweighter (slower).
    pub train_plugin: bool,
}

impl Default for NoiseSimSettings {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            kind: NoiseName::SymmetricFlip,
            strength: 0.3,
            base_corpus: 20_000,
            clean: 2_000,
            hyperval: 400,
            test: 500,
            consistency_vocab: 3,
            consistency_contexts: 2,
            grid_resolution: 0.01,
            oracle_dominant: 1.0,
            oracle_samples: 2_000,
            train_plugin: true,
        }
    }
}

impl NoiseSimSettings {
    pub fn benchmark(&self) -> NoisyBenchmarkConfig {
        NoisyBenchmarkConfig {
            world: self.world.to_config(),
            noise: self.kind.into(),
            noise_strength: self.strength,
            base_corpus: self.base_corpus,
            train: self.clean,
            hyperval: self.hyperval,
            test: self.test,
            prompt_len: 0,
            ..NoisyBenchmarkConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationName {
    Bernoulli,
    Exact,
}

/// Settings for the `theory` verb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySettings {
    pub num_tokens: usize,
    pub dim: usize,
    pub t_max: usize,
    pub trials: usize,
    pub observation: ObservationName,
    pub newton_iters: usize,
    pub smoothing_window: usize,
}

impl Default for TheorySettings {
    fn default() -> Self {
        let d = DecayConfig::default();
        Self {
            num_tokens: 16,
            dim: 3,
            t_max: d.t_max,
            trials: d.trials,
            observation: ObservationName::Bernoulli,
            newton_iters: d.newton_iters,
            smoothing_window: 10,
        }
    }
}

impl TheorySettings {
    pub fn to_config(&self, seed: u64) -> DecayConfig {
        DecayConfig {
            t_max: self.t_max,
            trials: self.trials,
            seed,
            noise: match self.observation {
                ObservationName::Bernoulli => ObservationNoise::Bernoulli,
                ObservationName::Exact => ObservationNoise::Exact,
            },
            init: None,
            newton_iters: self.newton_iters,
        }
    }
}

/// Settings for the `shift` verb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSettings {
    pub world: WorldSpec,
    pub leak: f64,
    pub base_corpus: usize,
    pub base_b_share: f64,
    pub clean_b_share: f64,
    pub ngram_lambda: f64,
    pub train: usize,
    pub hyperval: usize,
    /// Sampled generations per model.
    pub generations: usize,
    pub max_len: usize,
    pub temperature: f64,
}

impl Default for ShiftSettings {
    fn default() -> Self {
        let c = ShiftConfig::default();
        Self {
            world: WorldSpec::from(&c.world),
            leak: c.leak,
            base_corpus: c.base_corpus,
            base_b_share: c.base_b_share,
            clean_b_share: c.clean_b_share,
            ngram_lambda: c.ngram_lambda,
            train: c.train,
            hyperval: c.hyperval,
            generations: 500,
            max_len: 14,
            temperature: 1.0,
        }
    }
}

impl ShiftSettings {
    pub fn to_config(&self) -> ShiftConfig {
        ShiftConfig {
            world: self.world.to_config(),
            leak: self.leak,
            base_corpus: self.base_corpus,
            base_b_share: self.base_b_share,
            clean_b_share: self.clean_b_share,
            ngram_lambda: self.ngram_lambda,
            train: self.train,
            hyperval: self.hyperval,
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub base: BaseSpec,
    #[serde(default)]
    pub reweighter: ModelDims,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub decode: DecodeSettings,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub noise_sim: NoiseSimSettings,
    #[serde(default)]
    pub theory: TheorySettings,
    #[serde(default)]
    pub shift: ShiftSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str(r#"{"version": 1}"#).expect("defaults parse")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| LabError::config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(LabError::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Parse a config file; relative dataset paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let DataConfig::Jsonl(j) = &mut cfg.data {
            let dir = path.parent().unwrap_or(Path::new("."));
            for p in [&mut j.base, &mut j.adapt, &mut j.test] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn vocab_size_hint(&self) -> Option<usize> {
        match &self.data {
            DataConfig::Synthetic(s) => Some(s.world.vocab_size),
            DataConfig::Jsonl(_) => None,
        }
    }

    /// Checks shared by every pipeline verb.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if let DataConfig::Jsonl(j) = &self.data {
            for (name, p) in [("base", &j.base), ("adapt", &j.adapt), ("test", &j.test)] {
                if !p.exists() {
                    return bad(format!("dataset path data.{name} = {} does not exist", p.display()));
                }
            }
            if !(j.hyperval_fraction > 0.0 && j.hyperval_fraction < 1.0) {
                return bad("data.hyperval_fraction must lie in (0, 1)".into());
            }
        }
        if let DataConfig::Synthetic(s) = &self.data {
            if s.train == 0 || s.hyperval == 0 || s.test == 0 || s.items == 0 || s.references == 0 {
                return bad("synthetic split sizes, items and references must be positive".into());
            }
        }
        let uses = |m: Method| self.methods.contains(&m);
        if !(1..=12).contains(&self.reweighter.num_blocks) {
            return bad("reweighter.num_blocks must lie in 1..=12".into());
        }
        if uses(Method::WeightedComb) {
            if self.train.alphas.is_empty() {
                return bad("weightedcomb needs a non-empty train.alphas grid".into());
            }
            if let Some(a) = self.train.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                return bad(format!("alpha {a} outside [0, 1]"));
            }
        }
        if uses(Method::TempScale) && !(self.train.tempscale_learning_rate > 0.0) {
            return bad("tempscale needs a positive train.tempscale_learning_rate".into());
        }
        self.train
            .to_config(0)
            .validate()
            .map_err(|e| LabError::Config(e.to_string()))?;
        self.decode
            .to_config(0)
            .validate()
            .map_err(|e| LabError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_has_defaults() {
        let c = ExperimentConfig::from_json(r#"{"version": 1}"#).unwrap();
        assert_eq!(c.methods.len(), 5);
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
        assert!(matches!(c.data, DataConfig::Synthetic(_)));
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_json() {
        let mut c = ExperimentConfig::default();
        c.decode.strategy = StrategySpec::TopP {
            p: 0.9,
            temperature: 0.7,
        };
        c.base = BaseSpec::Transformer {
            dims: ModelDims::default(),
            max_epochs: 3,
            learning_rate: 1e-3,
        };
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(ExperimentConfig::from_json(r#"{"version": 2}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"version": 1, "bogus": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"version": 1, "methods": ["magic"]}"#).is_err());
        let c = ExperimentConfig::from_json(
            r#"{"version": 1, "data": {"kind": "jsonl", "base": "/no/a", "adapt": "/no/b", "test": "/no/c"}}"#,
        )
        .unwrap();
        assert!(matches!(c.validate(), Err(LabError::Config(_))));
    }

    #[test]
    fn method_specific_checks() {
        let mut c = ExperimentConfig::default();
        c.train.alphas.clear();
        assert!(c.validate().is_err());
        c.methods = vec![Method::Plugin];
        c.validate().unwrap();
        c.reweighter.num_blocks = 13;
        assert!(c.validate().is_err());
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
    }
}

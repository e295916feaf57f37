//! Autoregressive generation over any [`Predictor`], usually the plugin
//! combination of a frozen base and a reweighter.
//!
//! When the running context would no longer fit the predictor's window, only
//! the most recent `window - 1` tokens are kept.

use alloc::vec::Vec;
use num_traits::Float;
use thiserror::Error;

use crate::corpus::EOS;
use crate::models::{BlackBox, LanguageModel, ModelError};
use crate::plugin::{BasePredictor, PluginError, PluginPredictor, Predictor};
use crate::prob::argmax;
use crate::rng::Stream;
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Greedy,
    Temperature(f64),
    /// Nucleus mass `p`, then temperature `tau`.
    TopP(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub max_len: usize,
    pub stop_token: TokenId,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_len: 32,
            stop_token: EOS,
            strategy: Strategy::Greedy,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("prompt of {len} tokens does not fit window {window}")]
    ContextTooLong { len: usize, window: usize },
    #[error("bad decoding strategy: {0}")]
    BadStrategy(&'static str),
    #[error(transparent)]
    Plugin(#[from] PluginError),
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.max_len == 0 {
            return Err(DecodeError::BadStrategy("max_len must be at least 1"));
        }
        let tau_ok = |t: f64| t > 0.0 && t.is_finite();
        match self.strategy {
            Strategy::Greedy => Ok(()),
            Strategy::Temperature(t) if tau_ok(t) => Ok(()),
            Strategy::TopP(p, t) if p > 0.0 && p <= 1.0 && tau_ok(t) => Ok(()),
            Strategy::Temperature(_) => Err(DecodeError::BadStrategy("temperature must be positive")),
            Strategy::TopP(..) => Err(DecodeError::BadStrategy("top_p needs p in (0, 1] and tau > 0")),
        }
    }
}

/// One emitted token and the probabilities it had.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub token: TokenId,
    pub p_base: Option<f64>,
    pub p_reweight: Option<f64>,
    pub p_combined: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodeOutput {
    /// Generated tokens, ending with the stop token when it was produced.
    pub tokens: Vec<TokenId>,
    pub trace: Vec<TraceStep>,
}

/// `softmax(log p / tau)` computed stably.
pub fn apply_temperature(p: &[f64], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = p.iter().map(|&v| v.max(crate::PROB_FLOOR).ln() / tau).collect();
    crate::prob::softmax(&logits)
}

/// Indices of the smallest descending-probability prefix with mass at least
/// `top_p`, plus every token tied with the last one admitted.
pub fn nucleus(p: &[f64], top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut cut = order.len();
    for (k, &i) in order.iter().enumerate() {
        mass += p[i];
        if mass >= top_p {
            cut = k + 1;
            break;
        }
    }
    let boundary = p[order[cut - 1]];
    while cut < order.len() && p[order[cut]] == boundary {
        cut += 1;
    }
    order.truncate(cut);
    order
}

fn choose(p: &[f64], strategy: Strategy, rng: &mut Stream) -> usize {
    match strategy {
        Strategy::Greedy => argmax(p),
        Strategy::Temperature(tau) => rng.categorical(&apply_temperature(p, tau)),
        Strategy::TopP(top_p, tau) => {
            let q = apply_temperature(p, tau);
            let keep = nucleus(&q, top_p);
            let w: Vec<f64> = keep.iter().map(|&i| q[i]).collect();
            keep[rng.categorical(&w)]
        }
    }
}

/// Generate from `predictor` after `prompt`.
pub fn decode(predictor: &dyn Predictor, prompt: &[TokenId], cfg: &DecodeConfig) -> Result<DecodeOutput, DecodeError> {
    cfg.validate()?;
    let window = predictor.window();
    if let Some(w) = window {
        if prompt.len() >= w {
            return Err(DecodeError::ContextTooLong {
                len: prompt.len(),
                window: w,
            });
        }
    }
    let mut rng = Stream::with_stream(cfg.seed, 0x6465_636f);
    let mut context = prompt.to_vec();
    let mut out = DecodeOutput::default();
    for step in 0..cfg.max_len {
        let start = window.map_or(0, |w| context.len().saturating_sub(w - 1));
        let probs = predictor.step(&context[start..])?;
        let p = probs.combined.as_slice();
        let token = choose(p, cfg.strategy, &mut rng) as TokenId;
        out.trace.push(TraceStep {
            step,
            token,
            p_base: probs.base.as_ref().map(|b| b.as_slice()[token as usize]),
            p_reweight: probs.reweight.as_ref().map(|r| r.as_slice()[token as usize]),
            p_combined: p[token as usize],
        });
        out.tokens.push(token);
        context.push(token);
        if token == cfg.stop_token {
            break;
        }
    }
    Ok(out)
}

/// Greedy decoding of the plugin combination.
pub fn greedy_decode(
    blackbox: &BlackBox,
    reweighter: &dyn LanguageModel,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<DecodeOutput, DecodeError> {
    let cfg = DecodeConfig {
        strategy: Strategy::Greedy,
        ..*cfg
    };
    decode(&PluginPredictor::new(blackbox, reweighter)?, prompt, &cfg)
}

/// Temperature or top-p sampling from the plugin combination.
pub fn sample_decode(
    blackbox: &BlackBox,
    reweighter: &dyn LanguageModel,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<DecodeOutput, DecodeError> {
    if cfg.strategy == Strategy::Greedy {
        return Err(DecodeError::BadStrategy("sampling needs temperature or top_p"));
    }
    decode(&PluginPredictor::new(blackbox, reweighter)?, prompt, cfg)
}

/// The base model on its own.
pub fn decode_base(blackbox: &BlackBox, prompt: &[TokenId], cfg: &DecodeConfig) -> Result<DecodeOutput, DecodeError> {
    decode(&BasePredictor { base: blackbox }, prompt, cfg)
}

impl From<ModelError> for DecodeError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::ContextTooLong { len, window } => DecodeError::ContextTooLong { len, window },
            other => DecodeError::Plugin(PluginError::Model(other)),
        }
    }
}

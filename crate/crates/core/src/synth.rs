//! Synthetic benchmarks with known ground truth.
//!
//! A [`World`] is a seeded bigram model over a small vocabulary. Sequences
//! sampled from it are clean data; corrupted or filtered views of large
//! samples train the base model, so every distribution the experiments
//! compare against is available exactly.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::corpus::{Record, BOS, EOS, UNK};
use crate::models::{fit_ngram, BigramTable, LanguageModel, ModelError, NGramModel};
use crate::noise::{corrupt_corpus, make_transition_on, NoiseError, NoiseKind, TransitionMatrix};
use crate::plugin::{PluginError, Predictor};
use crate::rng::Stream;
use crate::{ProbVector, TokenId};

/// First id that is an ordinary word.
pub const FIRST_WORD: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub vocab_size: usize,
    /// Likely successors per context.
    pub successors: usize,
    /// Mass of the likely successors, split by halving weights.
    pub heavy_mass: f64,
    /// Probability of EOS after an ordinary word.
    pub eos_prob: f64,
    /// Share of words after which EOS is the most likely continuation.
    pub terminal_fraction: f64,
    /// Probability of EOS after a terminal word.
    pub terminal_eos: f64,
    /// Sequences are cut with EOS once they hold `max_len - 1` words.
    pub max_len: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            vocab_size: 50,
            successors: 4,
            heavy_mass: 0.85,
            eos_prob: 0.05,
            terminal_fraction: 0.25,
            terminal_eos: 0.6,
            max_len: 14,
        }
    }
}

/// Bigram ground truth. Rows for EOS and UNK are never used as contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    table: BigramTable,
    max_len: usize,
}

fn heavy_weights(k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|i| 0.5f64.powi(i as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Row with `heavy_mass` on `succ`, `eos` on EOS, the rest spread evenly
/// over `spread`.
fn build_row(v: usize, succ: &[usize], heavy_mass: f64, eos: f64, spread: &[usize]) -> ProbVector {
    let mut p = vec![0.0; v];
    let rest = 1.0 - heavy_mass - eos;
    for &j in spread {
        p[j] += rest / spread.len() as f64;
    }
    for (&j, w) in succ.iter().zip(heavy_weights(succ.len())) {
        p[j] += heavy_mass * w;
    }
    p[EOS as usize] += eos;
    ProbVector::normalize(p).expect("row has mass")
}

fn pick_distinct(rng: &mut Stream, pool: &[usize], k: usize) -> Vec<usize> {
    let mut pool = pool.to_vec();
    rng.shuffle(&mut pool);
    pool.truncate(k);
    pool
}

impl World {
    pub fn generate(cfg: &WorldConfig, seed: u64) -> Result<Self, ModelError> {
        let v = cfg.vocab_size;
        let words: Vec<usize> = (FIRST_WORD..v).collect();
        let bad_eos = cfg.heavy_mass + cfg.eos_prob > 1.0 || !(0.0..1.0).contains(&cfg.terminal_eos);
        if words.len() < cfg.successors || cfg.max_len < 2 || bad_eos {
            return Err(ModelError::BadConfig("world configuration is inconsistent".into()));
        }
        let mut rng = Stream::with_stream(seed, 0x776f_726c);
        let n_terminal = (cfg.terminal_fraction * words.len() as f64).round() as usize;
        let terminal = pick_distinct(&mut rng, &words, n_terminal);
        let rows = (0..v)
            .map(|prev| {
                let succ = pick_distinct(&mut rng, &words, cfg.successors);
                match prev as TokenId {
                    BOS => build_row(v, &succ, cfg.heavy_mass, 0.0, &words),
                    EOS | UNK => build_row(v, &[], 0.0, 0.0, &words),
                    _ if terminal.contains(&prev) => {
                        let heavy = cfg.heavy_mass * (1.0 - cfg.terminal_eos) / (1.0 - cfg.eos_prob);
                        build_row(v, &succ, heavy, cfg.terminal_eos, &words)
                    }
                    _ => build_row(v, &succ, cfg.heavy_mass, cfg.eos_prob, &words),
                }
            })
            .collect();
        Ok(Self {
            table: BigramTable::new(rows)?,
            max_len: cfg.max_len,
        })
    }

    pub fn from_table(table: BigramTable, max_len: usize) -> Self {
        Self { table, max_len }
    }

    pub fn table(&self) -> &BigramTable {
        &self.table
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Continue `prefix` until EOS; the result excludes the prefix and ends
    /// with EOS.
    pub fn continue_from(&self, prefix: &[TokenId], rng: &mut Stream) -> Vec<TokenId> {
        let mut ctx = prefix.to_vec();
        let start = ctx.len();
        loop {
            let p = self.next_token_probs(&ctx).expect("ids in range");
            let t = rng.categorical(p.as_slice()) as TokenId;
            ctx.push(t);
            if t == EOS {
                break;
            }
        }
        ctx.split_off(start)
    }

    /// Sequences (ending in EOS) with at least `min_words` words.
    pub fn sample_corpus(&self, n: usize, min_words: usize, seed: u64) -> Vec<Vec<TokenId>> {
        let mut rng = Stream::with_stream(seed, 0x7361_6d70);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let s = self.continue_from(&[], &mut rng);
            if s.len() > min_words {
                out.push(s);
            }
        }
        out
    }
}

impl LanguageModel for World {
    fn vocab_size(&self) -> usize {
        self.table.vocab_size()
    }

    fn next_token_probs(&self, context: &[TokenId]) -> Result<ProbVector, ModelError> {
        if context.len() + 1 >= self.max_len {
            self.table.next_token_probs(context)?;
            return Ok(ProbVector::one_hot(self.vocab_size(), EOS as usize));
        }
        self.table.next_token_probs(context)
    }

    fn parameter_digest(&self) -> [u8; 32] {
        self.table.parameter_digest()
    }
}

/// Split each sequence into a prompt of `prompt_len` tokens and the rest.
pub fn to_records(seqs: &[Vec<TokenId>], prompt_len: usize, vocab_size: usize) -> Vec<Record> {
    seqs.iter()
        .map(|s| {
            let k = prompt_len.min(s.len() - 1);
            Record::new(s[..k].to_vec(), s[k..].to_vec(), vocab_size).expect("valid ids")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyBenchmarkConfig {
    pub world: WorldConfig,
    pub noise: NoiseKind,
    pub noise_strength: f64,
    /// Sequences in the corrupted corpus the base is fit on.
    pub base_corpus: usize,
    pub ngram_order: usize,
    pub ngram_lambda: f64,
    pub train: usize,
    pub hyperval: usize,
    pub test: usize,
    pub prompt_len: usize,
}

impl Default for NoisyBenchmarkConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            noise: NoiseKind::SymmetricFlip,
            noise_strength: 0.3,
            base_corpus: 20_000,
            ngram_order: 2,
            ngram_lambda: 0.1,
            train: 2000,
            hyperval: 400,
            test: 500,
            prompt_len: 0,
        }
    }
}

/// A world, a base fit on its corrupted samples, and clean splits.
#[derive(Debug, Clone)]
pub struct NoisyBenchmark {
    pub world: World,
    pub noise: TransitionMatrix,
    /// The corrupted corpus the base was fit on.
    pub noisy_corpus: Vec<Vec<TokenId>>,
    pub base: NGramModel,
    pub train: Vec<Record>,
    pub hyperval: Vec<Record>,
    pub test: Vec<Record>,
}

pub fn noisy_benchmark(cfg: &NoisyBenchmarkConfig, seed: u64) -> Result<NoisyBenchmark, NoiseError> {
    let world = World::generate(&cfg.world, seed)?;
    let v = cfg.world.vocab_size;
    let noise = make_transition_on(cfg.noise, cfg.noise_strength, v, FIRST_WORD, seed)?;
    let raw = world.sample_corpus(cfg.base_corpus, 1, seed ^ 0xba5e);
    let noisy = corrupt_corpus(&raw, &noise, seed)?;
    let base = fit_ngram(&noisy, cfg.ngram_order, cfg.ngram_lambda, v)?;
    let clean = world.sample_corpus(cfg.train + cfg.hyperval + cfg.test, cfg.prompt_len, seed ^ 0xc1ea);
    let recs = to_records(&clean, cfg.prompt_len, v);
    let (train, rest) = recs.split_at(cfg.train);
    let (hyperval, test) = rest.split_at(cfg.hyperval);
    Ok(NoisyBenchmark {
        world,
        noise,
        noisy_corpus: noisy,
        base,
        train: train.to_vec(),
        hyperval: hyperval.to_vec(),
        test: test.to_vec(),
    })
}

/// Mean over every position of `records` of `KL(world ‖ predictor)`.
pub fn mean_kl(world: &World, predictor: &dyn Predictor, records: &[Record]) -> Result<f64, PluginError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in records {
        let toks = r.tokens();
        let preds = predictor.sequence(&toks)?;
        for (i, q) in preds.iter().enumerate() {
            let p = world.next_token_probs(&toks[..i])?;
            total += p.kl_divergence(q);
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// A prompt with reference continuations (EOS stripped).
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationItem {
    pub prompt: Vec<TokenId>,
    pub references: Vec<Vec<TokenId>>,
}

/// Prompts of `prompt_len` words drawn from the world, each with `refs`
/// sampled non-empty continuations.
pub fn generation_items(world: &World, n: usize, prompt_len: usize, refs: usize, seed: u64) -> Vec<GenerationItem> {
    let mut rng = Stream::with_stream(seed, 0x6765_6e73);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let full = world.continue_from(&[], &mut rng);
        if full.len() <= prompt_len + 1 {
            continue;
        }
        let prompt = full[..prompt_len].to_vec();
        let references = (0..refs)
            .map(|_| loop {
                let mut c = world.continue_from(&prompt, &mut rng);
                c.retain(|&t| t != EOS);
                if !c.is_empty() {
                    break c;
                }
            })
            .collect();
        out.push(GenerationItem { prompt, references });
    }
    out
}

/// Split of the word ids into two topics for the shift benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Topics {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl Topics {
    pub fn halves(vocab_size: usize) -> Self {
        let words: Vec<usize> = (FIRST_WORD..vocab_size).collect();
        let mid = words.len() / 2;
        Self {
            a: words[..mid].to_vec(),
            b: words[mid..].to_vec(),
        }
    }

    pub fn is_b(&self, t: TokenId) -> bool {
        self.b.contains(&(t as usize))
    }

    /// A sequence belongs to topic B when most of its words do.
    pub fn sequence_is_b(&self, seq: &[TokenId]) -> bool {
        let words: Vec<TokenId> = seq.iter().copied().filter(|&t| t as usize >= FIRST_WORD).collect();
        let b = words.iter().filter(|&&t| self.is_b(t)).count();
        2 * b > words.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftConfig {
    pub world: WorldConfig,
    /// Probability that a word is followed by a word of the other topic.
    pub leak: f64,
    pub base_corpus: usize,
    /// Share of topic-B sequences in the base corpus.
    pub base_b_share: f64,
    pub ngram_lambda: f64,
    /// Share of topic-B sequences in the reweighter's clean data.
    pub clean_b_share: f64,
    /// Clean sequences used to train the reweighter.
    pub train: usize,
    pub hyperval: usize,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig {
                eos_prob: 0.1,
                ..WorldConfig::default()
            },
            leak: 0.01,
            base_corpus: 10_000,
            base_b_share: 0.15,
            ngram_lambda: 0.1,
            clean_b_share: 0.8,
            train: 500,
            hyperval: 150,
        }
    }
}

/// Base fit on a mostly topic-A corpus; clean data leans towards topic B.
#[derive(Debug, Clone)]
pub struct ShiftBenchmark {
    pub topics: Topics,
    pub world_a: World,
    pub world_b: World,
    pub base: NGramModel,
    pub train: Vec<Record>,
    pub hyperval: Vec<Record>,
}

/// Two worlds that share word transitions (mostly within a topic) and
/// differ in which topic the first word is drawn from.
pub fn shift_benchmark(cfg: &ShiftConfig, seed: u64) -> Result<ShiftBenchmark, ModelError> {
    let v = cfg.world.vocab_size;
    let topics = Topics::halves(v);
    let mut rng = Stream::with_stream(seed, 0x7368_6966);
    let rest = 1.0 - cfg.world.heavy_mass - cfg.world.eos_prob;
    if !(0.0..=rest).contains(&cfg.leak) {
        return Err(ModelError::BadConfig("leak exceeds the spread mass".into()));
    }
    let shares = [cfg.base_b_share, cfg.clean_b_share];
    if shares.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(ModelError::BadConfig("topic shares must lie in [0, 1]".into()));
    }
    let mut word_rows = Vec::with_capacity(v);
    for prev in 0..v {
        let (own, other) = if topics.b.contains(&prev) {
            (&topics.b, &topics.a)
        } else {
            (&topics.a, &topics.b)
        };
        let succ = pick_distinct(&mut rng, own, cfg.world.successors);
        let mut p = build_row(v, &succ, cfg.world.heavy_mass, cfg.world.eos_prob, own).into_vec();
        // move `leak` of the in-topic spread mass to the other topic
        let own_spread = (rest - cfg.leak) / rest;
        for &j in own {
            let spread_part = rest / own.len() as f64;
            p[j] -= spread_part * (1.0 - own_spread);
        }
        for &j in other {
            p[j] += cfg.leak / other.len() as f64;
        }
        word_rows.push(ProbVector::normalize(p).expect("row has mass"));
    }
    let start = |own: &[usize], rng: &mut Stream| {
        let succ = pick_distinct(rng, own, cfg.world.successors);
        build_row(v, &succ, cfg.world.heavy_mass, 0.0, own)
    };
    let mut rows_a = word_rows.clone();
    rows_a[BOS as usize] = start(&topics.a, &mut rng);
    let mut rows_b = word_rows;
    rows_b[BOS as usize] = start(&topics.b, &mut rng);
    let world_a = World::from_table(BigramTable::new(rows_a)?, cfg.world.max_len);
    let world_b = World::from_table(BigramTable::new(rows_b)?, cfg.world.max_len);

    let n_b = (cfg.base_corpus as f64 * cfg.base_b_share).round() as usize;
    let mut corpus = world_a.sample_corpus(cfg.base_corpus - n_b, 1, seed ^ 0xa);
    corpus.extend(world_b.sample_corpus(n_b, 1, seed ^ 0xb));
    let base = fit_ngram(&corpus, 2, cfg.ngram_lambda, v)?;
    let mix = |n: usize, salt: u64| {
        let b = (n as f64 * cfg.clean_b_share).round() as usize;
        let mut seqs = world_b.sample_corpus(b, 1, seed ^ salt);
        seqs.extend(world_a.sample_corpus(n - b, 1, seed ^ salt ^ 0xaa));
        Stream::with_stream(seed, salt).shuffle(&mut seqs);
        to_records(&seqs, 0, v)
    };
    let train = mix(cfg.train, 0xbb);
    let hyperval = mix(cfg.hyperval, 0xbc);
    Ok(ShiftBenchmark {
        topics,
        world_a,
        world_b,
        base,
        train,
        hyperval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::freeze;
    use crate::plugin::BasePredictor;

    #[test]
    fn world_rows_are_distributions_with_expected_shape() {
        let w = World::generate(&WorldConfig::default(), 3).unwrap();
        assert_eq!(w.vocab_size(), 50);
        for prev in FIRST_WORD..50 {
            let r = w.table().row(prev as TokenId).as_slice();
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let eos = r[EOS as usize];
            assert!((eos - 0.05).abs() < 1e-12 || (eos - 0.6).abs() < 1e-12);
            assert_eq!(r[BOS as usize], 0.0);
            assert_eq!(r[UNK as usize], 0.0);
            let heavy = r[FIRST_WORD..].iter().filter(|&&p| p > 0.02).count();
            assert_eq!(heavy, 4);
        }
        assert_eq!(w.table().row(BOS).as_slice()[EOS as usize], 0.0);
    }

    #[test]
    fn samples_end_with_eos_and_respect_max_len() {
        let w = World::generate(&WorldConfig::default(), 1).unwrap();
        for s in w.sample_corpus(500, 2, 9) {
            assert_eq!(*s.last().unwrap(), EOS);
            assert!(s.len() <= 14 && s.len() > 2);
            assert_eq!(s.iter().filter(|&&t| t == EOS).count(), 1);
        }
    }

    #[test]
    fn benchmark_is_deterministic() {
        let cfg = NoisyBenchmarkConfig {
            base_corpus: 500,
            train: 20,
            hyperval: 5,
            test: 5,
            ..Default::default()
        };
        let a = noisy_benchmark(&cfg, 4).unwrap();
        let b = noisy_benchmark(&cfg, 4).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.base, b.base);
    }

    #[test]
    fn true_model_has_zero_kl_and_noisy_base_positive() {
        let cfg = NoisyBenchmarkConfig {
            base_corpus: 2000,
            train: 10,
            hyperval: 5,
            test: 50,
            ..Default::default()
        };
        let bench = noisy_benchmark(&cfg, 2).unwrap();
        assert_eq!(mean_kl(&bench.world, &bench.world, &bench.test).unwrap(), 0.0);
        let bb = freeze(bench.base.clone());
        let kl = mean_kl(&bench.world, &BasePredictor { base: &bb }, &bench.test).unwrap();
        assert!(kl > 0.05, "kl {kl}");
    }

    #[test]
    fn shift_worlds_start_in_their_topic() {
        let bench = shift_benchmark(
            &ShiftConfig {
                base_corpus: 200,
                train: 50,
                hyperval: 10,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let t = &bench.topics;
        let a = bench.world_a.sample_corpus(300, 1, 1);
        let b = bench.world_b.sample_corpus(300, 1, 1);
        let frac = |s: &[Vec<TokenId>]| s.iter().filter(|x| t.sequence_is_b(x)).count() as f64 / s.len() as f64;
        assert!(frac(&a) < 0.1);
        assert!(frac(&b) > 0.9, "b {}", frac(&b));
        for r in bench.world_a.table().rows().iter().skip(FIRST_WORD) {
            assert!((r.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_items_have_references() {
        let w = World::generate(&WorldConfig::default(), 8).unwrap();
        let items = generation_items(&w, 10, 2, 3, 0);
        assert_eq!(items.len(), 10);
        for it in items {
            assert_eq!(it.prompt.len(), 2);
            assert_eq!(it.references.len(), 3);
            assert!(it.references.iter().all(|r| !r.contains(&EOS)));
        }
    }
}

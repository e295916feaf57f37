//! The noise, theory, shift and ablation experiments.

use plugin_core::decoding::{DecodeConfig, Strategy};
use plugin_core::models::{freeze, init_transformer, BigramTable, BlackBox};
use plugin_core::noise::{
    consistency_check, diagonal_reweight_from_T, estimate_transition, make_transition, theorem1_decay,
    ConsistencyReport, DecayReport, ThetaFamily, TransitionMatrix,
};
use plugin_core::plugin::{heldout_nll, train_plugin, BasePredictor, PluginPredictor, Predictor};
use plugin_core::rng::Stream;
use plugin_core::synth::{mean_kl, noisy_benchmark, shift_benchmark, FIRST_WORD};
use plugin_core::{ProbVector, TokenId};

use crate::config::{ExperimentConfig, Method};
use crate::error::Result;
use crate::pipeline::{generate, load_task, train_methods, TaskData, Trained};

/// Held-out NLL and, on synthetic data, mean KL from the world.
pub fn score_distribution(
    cfg: &ExperimentConfig,
    task: &TaskData,
    base: &BlackBox,
    t: &Trained,
) -> Result<(f64, Option<f64>)> {
    let pred = t.predictor(base)?;
    let nll = heldout_nll(pred.as_ref(), &task.test, cfg.train.scope())?;
    let kl = match &task.world {
        Some(w) => Some(mean_kl(w, pred.as_ref(), &task.test)?),
        None => None,
    };
    Ok((nll, kl))
}

#[derive(Debug, Clone)]
pub struct NoiseSimResult {
    pub transition: TransitionMatrix,
    pub p_star: Vec<ProbVector>,
    pub tiny_transition: TransitionMatrix,
    pub consistency: ConsistencyReport,
    /// Estimate from a noisy oracle that returns exactly `Tᵀ p*` for the
    /// benchmark world. Pooling over contexts biases it wherever `p*` is
    /// spread out.
    pub oracle_estimate: TransitionMatrix,
    /// Estimate from the base fit on the noisy corpus.
    pub base_estimate: TransitionMatrix,
    pub support: Vec<usize>,
    pub oracle_max_error: f64,
    pub base_max_error: f64,
    /// [`oracle_estimator_check`] on the configured noise.
    pub peaked_oracle_max_error: f64,
    pub base_kl: f64,
    /// Constant reweighter `∝ 1 / T_ii` from the true diagonal.
    pub diag_known_kl: f64,
    /// Same from the estimated diagonal.
    pub diag_estimated_kl: f64,
    pub plugin_kl: Option<f64>,
}

fn max_error_on(a: &TransitionMatrix, b: &TransitionMatrix, rows: &[usize]) -> f64 {
    let n = a.size();
    rows.iter()
        .flat_map(|&i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (a.get(i, j) - b.get(i, j)).abs())
        .fold(0.0, f64::max)
}

fn inverse_diagonal(t: &TransitionMatrix, support: Option<&[usize]>) -> Vec<f64> {
    t.diagonal()
        .iter()
        .enumerate()
        .map(|(i, &d)| match support {
            // an unsupported row carries no information
            Some(s) if s[i] == 0 => 1.0,
            _ => 1.0 / d.max(1e-12),
        })
        .collect()
}

pub fn noise_sim(cfg: &ExperimentConfig, seed: u64) -> Result<NoiseSimResult> {
    let s = &cfg.noise_sim;
    let bench = noisy_benchmark(&s.benchmark(), seed)?;
    let v = s.world.vocab_size;

    let mut rng = Stream::with_stream(seed, 0x7469_6e79);
    let p_star: Vec<ProbVector> = (0..s.consistency_contexts)
        .map(|_| {
            let raw: Vec<f64> = (0..s.consistency_vocab).map(|_| rng.uniform() + 0.05).collect();
            ProbVector::normalize(raw).expect("positive")
        })
        .collect();
    let tiny = make_transition(s.kind.into(), s.strength, s.consistency_vocab, seed)?;
    let consistency = consistency_check(&p_star, &tiny, s.grid_resolution)?;

    let samples: Vec<(Vec<TokenId>, TokenId)> = bench
        .train
        .iter()
        .flat_map(|r| {
            let toks = r.tokens();
            (r.prompt.len()..toks.len())
                .map(|i| (toks[..i].to_vec(), toks[i]))
                .collect::<Vec<_>>()
        })
        .collect();
    let noisy_rows = bench
        .world
        .table()
        .rows()
        .iter()
        .map(|p| ProbVector::normalize(bench.noise.push_forward(p.as_slice())))
        .collect::<Result<Vec<_>, _>>()
        .expect("pushed rows keep mass");
    let oracle = BigramTable::new(noisy_rows)?;
    let oracle_est = estimate_transition(&oracle, &samples)?;
    let base_est = estimate_transition(&bench.base, &samples)?;
    let (_, _, peaked_oracle_max_error) =
        oracle_estimator_check(&bench.noise, s.oracle_dominant, s.oracle_samples, seed)?;
    let supported: Vec<usize> = (FIRST_WORD..v).filter(|&i| base_est.support[i] > 0).collect();

    let base_bb = freeze(bench.base.clone());
    let base_kl = mean_kl(&bench.world, &BasePredictor { base: &base_bb }, &bench.test)?;
    let kl_with = |diag: Vec<f64>| -> Result<f64> {
        let r = diagonal_reweight_from_T(&diag)?;
        let pp = PluginPredictor::new(&base_bb, &r)?;
        Ok(mean_kl(&bench.world, &pp, &bench.test)?)
    };
    let diag_known_kl = kl_with(inverse_diagonal(&bench.noise, None))?;
    let diag_estimated_kl = kl_with(inverse_diagonal(&base_est.matrix, Some(&base_est.support)))?;
    let plugin_kl = if s.train_plugin {
        let rw = init_transformer(cfg.reweighter.to_config(v), seed)?;
        let (rw, _) = train_plugin(&base_bb, rw, &bench.train, &bench.hyperval, &cfg.train.to_config(seed))?;
        let pp = PluginPredictor::new(&base_bb, &rw)?;
        Some(mean_kl(&bench.world, &pp, &bench.test)?)
    } else {
        None
    };
    Ok(NoiseSimResult {
        oracle_max_error: max_error_on(&oracle_est.matrix, &bench.noise, &supported),
        base_max_error: max_error_on(&base_est.matrix, &bench.noise, &supported),
        peaked_oracle_max_error,
        transition: bench.noise,
        p_star,
        tiny_transition: tiny,
        consistency,
        oracle_estimate: oracle_est.matrix,
        base_estimate: base_est.matrix,
        support: base_est.support,
        base_kl,
        diag_known_kl,
        diag_estimated_kl,
        plugin_kl,
    })
}

/// Estimator check against an oracle noisy model. The clean world moves
/// from token `c` to `c + 1 (mod n)` with probability `dominant` and spreads
/// the rest evenly; the oracle returns exactly `Tᵀ p*`. Returns the estimate
/// and its largest entry error on supported rows.
pub fn oracle_estimator_check(
    t: &TransitionMatrix,
    dominant: f64,
    samples: usize,
    seed: u64,
) -> Result<(TransitionMatrix, Vec<usize>, f64)> {
    if !(0.0..=1.0).contains(&dominant) {
        return Err(crate::LabError::config("noise_sim.oracle_dominant must lie in [0, 1]"));
    }
    let n = t.size();
    let rest = if n > 1 { (1.0 - dominant) / (n - 1) as f64 } else { 0.0 };
    let clean: Vec<ProbVector> = (0..n)
        .map(|c| {
            let p = (0..n).map(|j| if j == (c + 1) % n { dominant } else { rest }).collect();
            ProbVector::normalize(p).expect("positive mass")
        })
        .collect();
    let noisy = clean
        .iter()
        .map(|p| ProbVector::normalize(t.push_forward(p.as_slice())).expect("pushed rows keep mass"))
        .collect();
    let oracle = BigramTable::new(noisy)?;
    let mut rng = Stream::with_stream(seed, 0x6f72_6163);
    let pairs: Vec<(Vec<TokenId>, TokenId)> = (0..samples)
        .map(|_| {
            let c = rng.below(n);
            (vec![c as TokenId], rng.categorical(clean[c].as_slice()) as TokenId)
        })
        .collect();
    let est = estimate_transition(&oracle, &pairs)?;
    let rows: Vec<usize> = (0..n).filter(|&i| est.support[i] > 0).collect();
    let err = max_error_on(&est.matrix, t, &rows);
    Ok((est.matrix, est.support, err))
}

#[derive(Debug, Clone)]
pub struct TheoryResult {
    pub report: DecayReport,
    pub monotone_trials: usize,
}

pub fn theory(cfg: &ExperimentConfig, seed: u64) -> Result<TheoryResult> {
    let t = &cfg.theory;
    let fam = ThetaFamily::logistic(t.num_tokens, t.dim, seed);
    let report = theorem1_decay(&fam, &t.to_config(seed))?;
    Ok(TheoryResult {
        monotone_trials: report.monotone_trials(t.smoothing_window),
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftResult {
    pub generations: usize,
    pub base_b: usize,
    pub plugin_b: usize,
    /// Topic-B share of the reweighter's training data.
    pub clean_b_fraction: f64,
    /// The adaptation data is no more topic B than the base corpus, so no
    /// lift should be expected.
    pub degenerate: bool,
}

impl ShiftResult {
    pub fn base_fraction(&self) -> f64 {
        self.base_b as f64 / self.generations as f64
    }

    pub fn plugin_fraction(&self) -> f64 {
        self.plugin_b as f64 / self.generations as f64
    }
}

pub fn shift(cfg: &ExperimentConfig, seed: u64) -> Result<ShiftResult> {
    let s = &cfg.shift;
    let bench = shift_benchmark(&s.to_config(), seed)?;
    let v = s.world.vocab_size;
    let bb = freeze(bench.base.clone());
    let rw = init_transformer(cfg.reweighter.to_config(v), seed)?;
    let (rw, _) = train_plugin(&bb, rw, &bench.train, &bench.hyperval, &cfg.train.to_config(seed))?;
    let plugin = PluginPredictor::new(&bb, &rw)?;
    let base = BasePredictor { base: &bb };
    let dcfg = DecodeConfig {
        max_len: s.max_len,
        strategy: Strategy::Temperature(s.temperature),
        seed,
        ..DecodeConfig::default()
    };
    let prompts: Vec<&[TokenId]> = vec![&[]; s.generations];
    let count_b = |p: &dyn Predictor| -> Result<usize> {
        let outs = generate(p, &prompts, &dcfg)?;
        Ok(outs.iter().filter(|o| bench.topics.sequence_is_b(o)).count())
    };
    let clean_b = bench
        .train
        .iter()
        .filter(|r| bench.topics.sequence_is_b(&r.tokens()))
        .count();
    Ok(ShiftResult {
        generations: s.generations,
        base_b: count_b(&base)?,
        plugin_b: count_b(&plugin)?,
        clean_b_fraction: clean_b as f64 / bench.train.len().max(1) as f64,
        degenerate: s.clean_b_share <= s.base_b_share,
    })
}

/// Held-out NLL of the plugin for each reweighter depth.
pub fn ablation(cfg: &ExperimentConfig, seed: u64, depths: &[usize]) -> Result<Vec<(usize, f64)>> {
    let task = load_task(cfg, seed)?;
    let base = freeze(
        task.fitted_ngram
            .clone()
            .ok_or_else(|| crate::LabError::config("the depth ablation runs on synthetic data with an n-gram base"))?,
    );
    depths
        .iter()
        .map(|&d| {
            let mut c = cfg.clone();
            c.reweighter.num_blocks = d;
            let out = train_methods(&c, &task, &base, &[Method::Plugin], seed)?;
            let (nll, _) = score_distribution(&c, &task, &base, &out[0].trained)?;
            Ok((d, nll))
        })
        .collect()
}

//! Sequential estimation under a reweighted sampler.
//!
//! Tokens `x` carry features `φ(x) ∈ R^d` and a response probability
//! `f(θ; x) = sigmoid(θ·φ(x))`. At step `s` a token is drawn from
//! `p_s ∝ b ⊙ f(θ̂_{s-1}; ·)`, an outcome `Y_s` is observed with mean
//! `f(θ*; x_s)`, and `θ̂_s` minimizes the running squared loss
//! `Σ (Y - f(θ; x))²`. The excess loss at `t` is
//!
//! `L_t(θ̂_t) - L_t(θ*) = (1/t) Σ_x W_t(x) (f(θ*; x) - f(θ̂_t; x))²`
//!
//! with `W_t = Σ_{s≤t} p_s`. This is exact: the conditional variance term
//! `f*(1 - f*)` is common to both losses and cancels.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use super::linalg::{cholesky_solve, rank};
use super::NoiseError;
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObservationNoise {
    /// `Y ~ Bernoulli(f(θ*; x))`.
    #[default]
    Bernoulli,
    /// `Y = f(θ*; x)` with no noise.
    Exact,
}

/// Logistic response family over a finite token set.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFamily {
    /// `features[x]` has length `d`.
    pub features: Vec<Vec<f64>>,
    pub theta_star: Vec<f64>,
    /// Base distribution over tokens.
    pub base: Vec<f64>,
    /// Estimates are confined to `[-bound, bound]^d`.
    pub bound: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ThetaFamily {
    /// Gaussian features, `θ*` uniform in `[-1, 1]^d`, a random base
    /// distribution, and the box `[-5, 5]^d`.
    pub fn logistic(num_tokens: usize, dim: usize, seed: u64) -> Self {
        let mut rng = Stream::with_stream(seed, 0x7468_6574);
        let features = (0..num_tokens)
            .map(|_| (0..dim).map(|_| rng.normal()).collect())
            .collect();
        let theta_star = (0..dim).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let raw: Vec<f64> = (0..num_tokens).map(|_| 0.5 + rng.exponential()).collect();
        let total: f64 = raw.iter().sum();
        Self {
            features,
            theta_star,
            base: raw.iter().map(|v| v / total).collect(),
            bound: 5.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.features.len()
    }

    pub fn f(&self, theta: &[f64], x: usize) -> f64 {
        sigmoid(dot(theta, &self.features[x]))
    }

    /// `p ∝ b ⊙ f(θ; ·)`.
    pub fn sampler(&self, theta: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = (0..self.num_tokens())
            .map(|x| self.base[x] * self.f(theta, x))
            .collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }

    /// Hessian of the population squared loss at `θ*` under the sampler
    /// at `θ*`: `2 Σ_x p(x) f'(x) f'(x)ᵀ`.
    pub fn population_hessian(&self) -> Vec<f64> {
        let d = self.dim();
        let p = self.sampler(&self.theta_star);
        let mut h = vec![0.0; d * d];
        for (x, phi) in self.features.iter().enumerate() {
            let f = self.f(&self.theta_star, x);
            let s = f * (1.0 - f);
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] += 2.0 * p[x] * s * s * phi[i] * phi[j];
                }
            }
        }
        h
    }

    pub fn check_identifiable(&self) -> Result<(), NoiseError> {
        let d = self.dim();
        if d == 0 || self.features.iter().any(|p| p.len() != d) || self.base.len() != self.num_tokens() {
            return Err(NoiseError::BadConfig("feature, parameter and base sizes disagree"));
        }
        let flat: Vec<f64> = self.features.iter().flatten().copied().collect();
        if rank(&flat, self.num_tokens(), d, 1e-9) < d {
            return Err(NoiseError::NonIdentifiable);
        }
        if cholesky_solve(&self.population_hessian(), &vec![0.0; d], d).is_none() {
            return Err(NoiseError::NonIdentifiable);
        }
        Ok(())
    }

    /// Largest `‖∇f‖` and `‖∇²f‖_F` seen over every token and `samples`
    /// random points of the admissible box.
    pub fn derivative_bounds(&self, samples: usize, seed: u64) -> (f64, f64) {
        let mut rng = Stream::with_stream(seed, 0x626f_756e);
        let d = self.dim();
        let (mut l0, mut l1): (f64, f64) = (0.0, 0.0);
        for _ in 0..samples {
            let theta: Vec<f64> = (0..d).map(|_| self.bound * (2.0 * rng.uniform() - 1.0)).collect();
            for (x, phi) in self.features.iter().enumerate() {
                let f = self.f(&theta, x);
                let norm2 = dot(phi, phi);
                l0 = l0.max(f * (1.0 - f) * norm2.sqrt());
                l1 = l1.max((f * (1.0 - f) * (1.0 - 2.0 * f)).abs() * norm2);
            }
        }
        (l0, l1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayConfig {
    pub t_max: usize,
    pub trials: usize,
    pub seed: u64,
    pub noise: ObservationNoise,
    /// Starting estimate; zeros when `None`.
    pub init: Option<Vec<f64>>,
    pub newton_iters: usize,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            t_max: 5000,
            trials: 20,
            seed: 0,
            noise: ObservationNoise::Bernoulli,
            init: None,
            newton_iters: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// Excess loss per trial, entry `t - 1` for `t = 1..=t_max`.
    pub per_trial: Vec<Vec<f64>>,
    pub mean_excess: Vec<f64>,
    /// Population standard deviation across trials.
    pub std_excess: Vec<f64>,
    /// Average conditional outcome variance under the realized samplers,
    /// averaged over trials.
    pub sigma2: Vec<f64>,
    /// Least-squares fit of `ln mean_excess` on `ln t` over
    /// `t ∈ [t_max/10, t_max]`.
    pub slope: f64,
    pub intercept: f64,
    /// Entries below zero. The exact excess cannot be negative, so this
    /// counts numerical failures.
    pub negative: usize,
}

impl DecayReport {
    pub fn trials(&self) -> usize {
        self.per_trial.len()
    }

    pub fn t_max(&self) -> usize {
        self.mean_excess.len()
    }

    /// Trailing moving average; entry `k` averages `series[k..k + window]`.
    pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
        if window == 0 || series.len() < window {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(series.len() + 1 - window);
        let mut acc: f64 = series[..window].iter().sum();
        out.push(acc / window as f64);
        for k in window..series.len() {
            acc += series[k] - series[k - window];
            out.push(acc / window as f64);
        }
        out
    }

    /// Number of smoothed steps at which a trial's excess goes up.
    pub fn increases(series: &[f64], window: usize) -> usize {
        Self::smooth(series, window).windows(2).filter(|w| w[1] > w[0]).count()
    }

    /// Trials whose smoothed excess never increases.
    pub fn monotone_trials(&self, window: usize) -> usize {
        self.per_trial
            .iter()
            .filter(|s| Self::increases(s, window) == 0)
            .count()
    }
}

struct Stats {
    n: Vec<f64>,
    s: Vec<f64>,
}

/// Running objective `Σ_x n_x f_x² - 2 S_x f_x` (constant dropped).
fn objective(fam: &ThetaFamily, st: &Stats, theta: &[f64]) -> f64 {
    (0..fam.num_tokens())
        .filter(|&x| st.n[x] > 0.0)
        .map(|x| {
            let f = fam.f(theta, x);
            st.n[x] * f * f - 2.0 * st.s[x] * f
        })
        .sum()
}

fn grad_hess(fam: &ThetaFamily, st: &Stats, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = fam.dim();
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    for (x, phi) in fam.features.iter().enumerate() {
        if st.n[x] == 0.0 {
            continue;
        }
        let f = fam.f(theta, x);
        let s = f * (1.0 - f);
        let r = st.n[x] * f - st.s[x];
        let gc = 2.0 * r * s;
        let hc = 2.0 * (st.n[x] * s * s + r * s * (1.0 - 2.0 * f));
        for i in 0..d {
            g[i] += gc * phi[i];
            for j in 0..d {
                h[i * d + j] += hc * phi[i] * phi[j];
            }
        }
    }
    (g, h)
}

/// Damped Newton with a Levenberg shift when the Hessian is not positive
/// definite, backtracking on the objective, and projection onto the box.
fn minimize(fam: &ThetaFamily, st: &Stats, theta: &mut Vec<f64>, iters: usize) {
    let d = fam.dim();
    let mut current = objective(fam, st, theta);
    for _ in 0..iters {
        let (g, h) = grad_hess(fam, st, theta);
        let gnorm = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if gnorm < 1e-12 {
            return;
        }
        let scale = (0..d).map(|i| h[i * d + i].abs()).fold(1e-12, f64::max);
        let mut mu = 0.0;
        let step = loop {
            let mut shifted = h.clone();
            for i in 0..d {
                shifted[i * d + i] += mu;
            }
            if let Some(s) = cholesky_solve(&shifted, &g, d) {
                break s;
            }
            mu = if mu == 0.0 { 1e-6 * scale } else { mu * 10.0 };
        };
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(t, s)| (t - alpha * s).clamp(-fam.bound, fam.bound))
                .collect();
            let v = objective(fam, st, &cand);
            if v <= current {
                let delta = cand
                    .iter()
                    .zip(theta.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                *theta = cand;
                current = v;
                moved = delta > 1e-13;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            return;
        }
    }
}

/// Run the sequential protocol `cfg.trials` times and summarize the excess
/// loss curve.
pub fn theorem1_decay(fam: &ThetaFamily, cfg: &DecayConfig) -> Result<DecayReport, NoiseError> {
    fam.check_identifiable()?;
    if cfg.t_max < 10 || cfg.trials == 0 {
        return Err(NoiseError::BadConfig("need t_max >= 10 and at least one trial"));
    }
    let d = fam.dim();
    let k = fam.num_tokens();
    let f_star: Vec<f64> = (0..k).map(|x| fam.f(&fam.theta_star, x)).collect();
    let init = cfg.init.clone().unwrap_or_else(|| vec![0.0; d]);
    if init.len() != d {
        return Err(NoiseError::BadConfig("init has the wrong dimension"));
    }
    let mut per_trial = Vec::with_capacity(cfg.trials);
    let mut sigma2 = vec![0.0; cfg.t_max];
    let mut negative = 0;
    for trial in 0..cfg.trials {
        let mut rng = Stream::with_stream(cfg.seed, trial as u64);
        let mut theta = init.clone();
        let mut st = Stats {
            n: vec![0.0; k],
            s: vec![0.0; k],
        };
        let mut w = vec![0.0; k];
        let mut excess = Vec::with_capacity(cfg.t_max);
        for t in 1..=cfg.t_max {
            let p = fam.sampler(&theta);
            for (wx, px) in w.iter_mut().zip(&p) {
                *wx += px;
            }
            let x = rng.categorical(&p);
            let y = match cfg.noise {
                ObservationNoise::Bernoulli => f64::from(u8::from(rng.uniform() < f_star[x])),
                ObservationNoise::Exact => f_star[x],
            };
            st.n[x] += 1.0;
            st.s[x] += y;
            minimize(fam, &st, &mut theta, cfg.newton_iters);
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(NoiseError::OptimizerDiverged(t));
            }
            let tf = t as f64;
            let e: f64 = (0..k)
                .map(|x| {
                    let diff = f_star[x] - fam.f(&theta, x);
                    w[x] * diff * diff
                })
                .sum::<f64>()
                / tf;
            if e < 0.0 {
                negative += 1;
            }
            excess.push(e);
            let var: f64 = (0..k).map(|x| w[x] * f_star[x] * (1.0 - f_star[x])).sum::<f64>() / tf;
            sigma2[t - 1] += var / cfg.trials as f64;
        }
        per_trial.push(excess);
    }
    let trials = cfg.trials as f64;
    let mean_excess: Vec<f64> = (0..cfg.t_max)
        .map(|i| per_trial.iter().map(|s| s[i]).sum::<f64>() / trials)
        .collect();
    let std_excess = (0..cfg.t_max)
        .map(|i| {
            let m = mean_excess[i];
            (per_trial.iter().map(|s| (s[i] - m).powi(2)).sum::<f64>() / trials).sqrt()
        })
        .collect();
    let (slope, intercept) = loglog_fit(&mean_excess, cfg.t_max / 10, cfg.t_max);
    Ok(DecayReport {
        per_trial,
        mean_excess,
        std_excess,
        sigma2,
        slope,
        intercept,
        negative,
    })
}

/// OLS of `ln y_t` on `ln t` for `t ∈ [lo, hi]`, positive entries only.
pub(crate) fn loglog_fit(series: &[f64], lo: usize, hi: usize) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = (lo.max(1)..=hi.min(series.len()))
        .filter(|&t| series[t - 1] > 0.0)
        .map(|t| ((t as f64).ln(), series[t - 1].ln()))
        .collect();
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

//! Exhaustive grid check that minimizing the forward-corrected loss on noisy
//! labels lands on the same tabular model as minimizing plain cross-entropy
//! on clean labels.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use super::{NoiseError, TransitionMatrix};
use crate::{ProbVector, PROB_FLOOR};

pub const MAX_VOCAB: usize = 4;
pub const MAX_CONTEXTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    /// Per context, grid minimizer of `E_{p*}[-log q]`.
    pub clean_argmin: Vec<Vec<f64>>,
    /// Per context, grid minimizer of `E_{Tᵀp*}[-log Tᵀq]`.
    pub corrected_argmin: Vec<Vec<f64>>,
    /// Largest entry difference between the two, over all contexts.
    pub distance: f64,
    pub grid_step: f64,
    /// False when `T` is singular, in which case the corrected objective
    /// cannot separate clean distributions.
    pub identifiable: bool,
}

impl ConsistencyReport {
    pub fn agrees(&self) -> bool {
        self.distance <= self.grid_step + 1e-12
    }
}

/// Visit every point of the simplex grid with `steps` increments per unit.
fn for_each_grid_point(vocab: usize, steps: usize, mut f: impl FnMut(&[f64])) {
    let mut counts = vec![0usize; vocab];
    let mut point = vec![0.0; vocab];
    fn rec(k: usize, left: usize, steps: usize, counts: &mut [usize], point: &mut [f64], f: &mut dyn FnMut(&[f64])) {
        let last = counts.len() - 1;
        if k == last {
            counts[k] = left;
            for (p, &c) in point.iter_mut().zip(counts.iter()) {
                *p = c as f64 / steps as f64;
            }
            f(point);
            return;
        }
        for c in 0..=left {
            counts[k] = c;
            rec(k + 1, left - c, steps, counts, point, f);
        }
    }
    rec(0, steps, steps, &mut counts, &mut point, &mut f);
}

fn cross_entropy(weights: &[f64], q: &[f64]) -> f64 {
    weights
        .iter()
        .zip(q)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, q)| -w * q.max(PROB_FLOOR).ln())
        .sum()
}

fn grid_argmin(vocab: usize, steps: usize, mut objective: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut best = (f64::INFINITY, vec![0.0; vocab]);
    for_each_grid_point(vocab, steps, |q| {
        let v = objective(q);
        if v < best.0 {
            best.0 = v;
            best.1.copy_from_slice(q);
        }
    });
    best.1
}

/// The tabular model has one free simplex per context and both objectives
/// are sums over contexts, so the joint grid search factorizes into an
/// exhaustive search per context.
pub fn consistency_check(
    p_star: &[ProbVector],
    t: &TransitionMatrix,
    grid_resolution: f64,
) -> Result<ConsistencyReport, NoiseError> {
    let vocab = t.size();
    if vocab > MAX_VOCAB || p_star.len() > MAX_CONTEXTS {
        return Err(NoiseError::InstanceTooLarge {
            vocab,
            contexts: p_star.len(),
        });
    }
    if p_star.is_empty() {
        return Err(NoiseError::EmptyData);
    }
    if let Some(p) = p_star.iter().find(|p| p.len() != vocab) {
        return Err(NoiseError::VocabMismatch {
            left: vocab,
            right: p.len(),
        });
    }
    let steps_f = 1.0 / grid_resolution;
    let steps = steps_f.round() as usize;
    if !(grid_resolution > 0.0) || steps == 0 || (steps_f - steps as f64).abs() > 1e-9 {
        return Err(NoiseError::BadGrid);
    }
    let mut clean_argmin = Vec::new();
    let mut corrected_argmin = Vec::new();
    let mut distance: f64 = 0.0;
    for p in p_star {
        let clean = grid_argmin(vocab, steps, |q| cross_entropy(p.as_slice(), q));
        let noisy = t.push_forward(p.as_slice());
        let corrected = grid_argmin(vocab, steps, |q| cross_entropy(&noisy, &t.push_forward(q)));
        for (a, b) in clean.iter().zip(&corrected) {
            distance = distance.max((a - b).abs());
        }
        clean_argmin.push(clean);
        corrected_argmin.push(corrected);
    }
    Ok(ConsistencyReport {
        clean_argmin,
        corrected_argmin,
        distance,
        grid_step: grid_resolution,
        identifiable: t.rank(1e-9) == vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_point_count() {
        let mut n = 0;
        for_each_grid_point(3, 10, |q| {
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            n += 1;
        });
        assert_eq!(n, 66);
    }
}

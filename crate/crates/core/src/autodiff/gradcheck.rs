use alloc::format;
use alloc::vec::Vec;

use super::{AutodiffError, Graph, Tensor, Var};

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(format!("p{i}"), t.clone()))
        .collect();
    let loss = f(&mut g, &vars)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(AutodiffError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compare reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh graph and one parameter leaf per entry of `params`
/// and returns a scalar node. The result is
/// `max |analytic - numeric| / max(1, |numeric|)` over every coordinate.
pub fn check_gradients<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    if !(1e-8..=1e-3).contains(&epsilon) {
        return Err(AutodiffError::BadEpsilon(epsilon));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(format!("p{i}"), t.clone()))
        .collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("param gradient");
        for j in 0..work[pi].len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + epsilon;
            let up = evaluate(&f, &work)?;
            work[pi].data_mut()[j] = orig - epsilon;
            let down = evaluate(&f, &work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = (analytic.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

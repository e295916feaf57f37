//! Dense helpers for the small matrices in this module.

use alloc::vec::Vec;
use num_traits::Float;

/// Numerical rank by Gaussian elimination with partial pivoting.
pub(crate) fn rank(m: &[f64], rows: usize, cols: usize, tol: f64) -> usize {
    let mut a = m.to_vec();
    let mut rank = 0;
    for c in 0..cols {
        if rank == rows {
            break;
        }
        let (piv, best) = (rank..rows)
            .map(|r| (r, a[r * cols + c].abs()))
            .fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= tol {
            continue;
        }
        for k in 0..cols {
            a.swap(rank * cols + k, piv * cols + k);
        }
        for r in rank + 1..rows {
            let f = a[r * cols + c] / a[rank * cols + c];
            for k in c..cols {
                a[r * cols + k] -= f * a[rank * cols + k];
            }
        }
        rank += 1;
    }
    rank
}

/// Solve `a x = b` for symmetric positive-definite `a` (n x n) by Cholesky.
/// Returns `None` when `a` is not numerically positive definite.
pub(crate) fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 1e-12 * a[i * n + i].abs().max(1e-300)) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}

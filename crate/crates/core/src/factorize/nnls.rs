use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::solve_symmetric;

/// Non-negative least squares in Gram form (Lawson–Hanson active set).
///
/// Minimizes `uᵀ·G·u − 2·bᵀ·u` subject to `u ≥ 0`, which for `G = W·Wᵀ` and
/// `b = W·a` is `‖a − u·W‖²` up to a constant.
pub fn nnls(gram: ArrayView2<f64>, rhs: ArrayView1<f64>) -> Array1<f64> {
    let k = rhs.len();
    let mut u = Array1::<f64>::zeros(k);
    let mut passive = vec![false; k];
    let scale = rhs
        .iter()
        .chain(gram.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let dual_tol = 1e-14 * scale;

    for _ in 0..3 * k.max(1) + 10 {
        // dual = b − G·u is half the negative gradient
        let dual = &rhs - &gram.dot(&u);
        let candidate = (0..k)
            .filter(|&j| !passive[j])
            .max_by(|&x, &y| dual[x].total_cmp(&dual[y]).then(y.cmp(&x)));
        let Some(t) = candidate.filter(|&j| dual[j] > dual_tol) else {
            break;
        };
        passive[t] = true;

        let mut entered = true;
        loop {
            let s = solve_passive(gram, rhs, &passive);
            if entered && s[t] <= 0.0 {
                // the gradient sign at t was rounding noise
                passive[t] = false;
                return finish(u, &passive);
            }
            entered = false;
            if (0..k).all(|j| !passive[j] || s[j] > 0.0) {
                u = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in (0..k).filter(|&j| passive[j] && s[j] <= 0.0) {
                alpha = alpha.min(u[j] / (u[j] - s[j]));
            }
            for j in 0..k {
                u[j] += alpha * (s[j] - u[j]);
                if passive[j] && u[j] <= 1e-15 * scale.max(1.0) {
                    passive[j] = false;
                    u[j] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    finish(u, &passive)
}

fn finish(mut u: Array1<f64>, passive: &[bool]) -> Array1<f64> {
    for (v, &p) in u.iter_mut().zip(passive) {
        if !p || *v <= 0.0 {
            *v = 0.0;
        }
    }
    u
}

/// Unconstrained minimizer over the passive coordinates, zero elsewhere.
fn solve_passive(gram: ArrayView2<f64>, rhs: ArrayView1<f64>, passive: &[bool]) -> Array1<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let g = DMatrix::from_fn(idx.len(), idx.len(), |a, b| gram[[idx[a], idx[b]]]);
    let b = DVector::from_fn(idx.len(), |a, _| rhs[idx[a]]);
    let x = solve_symmetric(&g, &b);
    let mut out = Array1::zeros(passive.len());
    for (a, &j) in idx.iter().enumerate() {
        out[j] = x[a];
    }
    out
}

/// Refits non-negative coefficients of every row of `a` (`m × d`) over a fixed
/// basis `w` (`k × d`): each row of the result solves
/// `min ‖aᵢ − u·W‖² s.t. u ≥ 0`.
pub fn nnls_refit(a: ArrayView2<f64>, w: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != w.ncols() {
        return Err(Error::Dimension(format!(
            "activations have {} columns, basis has {}",
            a.ncols(),
            w.ncols()
        )));
    }
    let gram = w.dot(&w.t());
    let rhs = a.dot(&w.t());
    let mut u = Array2::zeros((a.nrows(), w.nrows()));
    for (b, mut out) in rhs.rows().into_iter().zip(u.rows_mut()) {
        out.assign(&nnls(gram.view(), b));
    }
    Ok(u)
}

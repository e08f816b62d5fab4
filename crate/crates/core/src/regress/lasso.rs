use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stopping rule for coordinate descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    pub max_iter: usize,
    /// Converged once a full cycle changes no weight by more than `tol` and
    /// the subgradient optimality conditions hold within `tol`.
    pub tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            max_iter: 10_000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub weights: Array1<f64>,
    /// Completed coordinate cycles.
    pub cycles: usize,
    pub converged: bool,
}

/// Sufficient statistics of a least-squares problem: `G = XᵀX/n`, `c = Xᵀy/n`.
///
/// Coordinate descent only touches these, so one Gram matrix serves every
/// target column fitted against the same design.
#[derive(Debug, Clone)]
pub struct Gram {
    pub g: Array2<f64>,
    pub n: usize,
}

impl Gram {
    pub fn new(x: ArrayView2<f64>) -> Self {
        let n = x.nrows();
        Gram {
            g: x.t().dot(&x) / n.max(1) as f64,
            n,
        }
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }
}

/// `(1/n)·‖X·w − y‖² + λ·‖w‖₁`
pub fn lasso_objective(x: ArrayView2<f64>, y: ArrayView1<f64>, w: ArrayView1<f64>, lambda: f64) -> f64 {
    let r = x.dot(&w) - y;
    r.dot(&r) / x.nrows() as f64 + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Smallest `λ` for which the zero vector is optimal: `max_j |2·xⱼᵀy| / n`.
pub fn lambda_max(x: ArrayView2<f64>, y: ArrayView1<f64>) -> f64 {
    let n = x.nrows() as f64;
    x.t().dot(&y).iter().fold(0.0f64, |m, v| m.max((2.0 * v / n).abs()))
}

pub(crate) fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

/// Lasso by cyclic coordinate descent with soft-thresholding.
///
/// Minimizes `(1/n)·‖X·w − y‖² + λ·‖w‖₁`. Note the `1/n` (not `1/2n`)
/// scaling: the soft-threshold level is `λ/2`. Inputs are expected to be
/// standardized; no intercept is fitted.
pub fn lasso_cd(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "X has {} rows, y has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) || !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::NonFinite("lasso inputs".into()));
    }
    let gram = Gram::new(x);
    let xty = x.t().dot(&y) / x.nrows().max(1) as f64;
    Ok(lasso_gram(&gram, xty.view(), lambda, opts))
}

/// Coordinate descent on the sufficient statistics `G`, `c = Xᵀy/n`.
///
/// With `q = G·w` maintained incrementally, the update of coordinate `j` is
/// `wⱼ ← S(cⱼ − qⱼ + Gⱼⱼ·wⱼ, λ/2) / Gⱼⱼ`.
pub fn lasso_gram(gram: &Gram, xty: ArrayView1<f64>, lambda: f64, opts: &LassoOptions) -> LassoFit {
    let p = gram.dim();
    let g = &gram.g;
    let mut w = Array1::<f64>::zeros(p);
    let mut q = Array1::<f64>::zeros(p);
    let half = lambda / 2.0;

    let mut cycles = 0;
    let mut converged = false;
    while cycles < opts.max_iter {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            let gjj = g[[j, j]];
            if gjj <= 0.0 {
                continue;
            }
            let rho = xty[j] - q[j] + gjj * w[j];
            let next = soft_threshold(rho, half) / gjj;
            let delta = next - w[j];
            if delta != 0.0 {
                q.scaled_add(delta, &g.column(j));
                w[j] = next;
                max_delta = max_delta.max(delta.abs());
            }
        }
        cycles += 1;
        if max_delta < opts.tol {
            // refresh q to shed accumulated drift before certifying
            q = g.dot(&w);
            if kkt_violation(g, xty, &w, &q, lambda) <= opts.tol {
                converged = true;
                break;
            }
        }
    }
    LassoFit {
        weights: w,
        cycles,
        converged,
    }
}

/// Largest violation of the lasso subgradient conditions, using the gradient
/// `2·(G·w − c)` of the smooth term.
fn kkt_violation(
    g: &Array2<f64>,
    xty: ArrayView1<f64>,
    w: &Array1<f64>,
    q: &Array1<f64>,
    lambda: f64,
) -> f64 {
    (0..w.len())
        .filter(|&j| g[[j, j]] > 0.0)
        .map(|j| {
            let grad = 2.0 * (q[j] - xty[j]);
            if w[j] != 0.0 {
                (grad + lambda * w[j].signum()).abs()
            } else {
                (grad.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

//! Concept extraction by dictionary learning: `A ≈ U·W` with `U ≥ 0`.
//!
//! Two factorizations are provided. [`nnmf`] additionally constrains the basis
//! `W` to be non-negative and suits post-ReLU activations; [`semi_nmf`] leaves
//! `W` unconstrained for signed activations such as transformer class tokens.
//! [`nnls_refit`] re-expresses new rows over a fixed basis.

mod kmeans;
mod nnls;
mod nnmf;
mod semi_nmf;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kmeans::{kmeans, KMeans};
pub use nnls::{nnls, nnls_refit};
pub use nnmf::nnmf;
pub use semi_nmf::semi_nmf;

/// Default number of concepts per (layer, class).
pub const DEFAULT_CONCEPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nnmf,
    SemiNmf,
}

impl Method {
    /// NNMF for non-negative matrices, Semi-NMF as soon as one entry is negative.
    pub fn detect(a: ArrayView2<f64>) -> Method {
        if a.iter().any(|&v| v < 0.0) {
            Method::SemiNmf
        } else {
            Method::Nnmf
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nnmf => "nnmf",
            Method::SemiNmf => "semi_nmf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizeOptions {
    pub max_iter: usize,
    /// Stop once the relative objective decrease of one iteration drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for FactorizeOptions {
    fn default() -> Self {
        FactorizeOptions {
            max_iter: 500,
            tol: 1e-5,
            seed: 0,
        }
    }
}

/// Result of a factorization `A ≈ U·W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDecomposition {
    /// `n × k` concept coefficients, non-negative.
    pub u: Array2<f64>,
    /// `k × d` concept basis.
    pub w: Array2<f64>,
    pub method: Method,
    pub k: usize,
    /// `‖A − U·W‖_F`
    pub recon_error: f64,
    pub iterations: usize,
    /// Squared Frobenius objective after initialization and after every iteration.
    pub objective_trace: Vec<f64>,
}

impl ConceptDecomposition {
    pub fn k(&self) -> usize {
        self.k
    }

    /// `recon_error / ‖A‖_F`, or the absolute error when `A` is zero.
    pub fn relative_error(&self, a: ArrayView2<f64>) -> f64 {
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            self.recon_error / norm
        } else {
            self.recon_error
        }
    }
}

/// Dispatches to [`nnmf`] or [`semi_nmf`].
pub fn factorize(
    a: ArrayView2<f64>,
    k: usize,
    method: Method,
    opts: &FactorizeOptions,
) -> Result<ConceptDecomposition> {
    match method {
        Method::Nnmf => nnmf(a, k, opts),
        Method::SemiNmf => semi_nmf(a, k, opts),
    }
}

/// Frobenius norm of `A − U·W`.
pub fn reconstruction_error(
    a: ArrayView2<f64>,
    u: ArrayView2<f64>,
    w: ArrayView2<f64>,
) -> Result<f64> {
    if u.nrows() != a.nrows() || w.ncols() != a.ncols() || u.ncols() != w.nrows() {
        return Err(Error::Dimension(format!(
            "A is {:?}, U is {:?}, W is {:?}",
            a.dim(),
            u.dim(),
            w.dim()
        )));
    }
    Ok(crate::linalg::frobenius_distance(a, u.dot(&w).view()))
}

fn check_rank(a: ArrayView2<f64>, k: usize) -> Result<()> {
    let (n, d) = a.dim();
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={} for a {n}×{d} matrix",
            n.min(d)
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("activation matrix".into()));
    }
    Ok(())
}

fn squared_residual(a: ArrayView2<f64>, u: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let r = crate::linalg::frobenius_distance(a, u.dot(w).view());
    r * r
}

/// Clamps to `+0.0`, removing negatives and `-0.0`.
#[inline]
fn clamp_nonneg(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Result of a multiplicative update: negatives, `-0.0` and subnormals all
/// become `+0.0`. An entry decaying towards zero shrinks geometrically, and
/// once subnormal its update ratio loses all precision; zero is a fixed
/// point of the multiplicative rules, so flushing it is exact in effect.
#[inline]
fn flush_update(v: f64) -> f64 {
    if v >= f64::MIN_POSITIVE {
        v
    } else {
        0.0
    }
}

/// Zeroes the coefficient rows whose activation row is all zeros.
fn zero_empty_rows(a: ArrayView2<f64>, u: &mut Array2<f64>) {
    for (arow, mut urow) in a.rows().into_iter().zip(u.rows_mut()) {
        if arow.iter().all(|&v| v == 0.0) {
            urow.fill(0.0);
        }
    }
}

/// Largest increase of `‖A − UW‖²` that rounding alone can produce from an
/// objective of `prev`: each residual entry carries an absolute error of
/// about `(k + 1)·ε·|a|`, so the computed objective moves by up to
/// `e·(2·√prev + e)` with `e = 8·(k + 1)·ε·‖A‖_F`, plus a relative term for
/// the summation itself. Near an exact fit this absolute term dominates.
pub fn objective_rounding_slack(prev: f64, a_norm_sq: f64, k: usize) -> f64 {
    let e = 8.0 * (k + 1) as f64 * f64::EPSILON * a_norm_sq.sqrt();
    1e-10 * prev + e * (2.0 * prev.sqrt() + e)
}

/// Monotone objective check shared by the iterative solvers, up to the
/// rounding of the objective evaluation.
fn debug_check_monotone(prev: f64, cur: f64, a_norm_sq: f64, k: usize) {
    debug_assert!(
        cur <= prev + objective_rounding_slack(prev, a_norm_sq, k),
        "objective increased from {prev} to {cur}"
    );
}

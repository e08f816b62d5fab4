//! Sparse linear maps from one model's activations to concept coefficients.
//!
//! Inputs and targets are standardized, one lasso problem is solved per target
//! column on each of `folds` disjoint training folds, and the fold weights are
//! averaged. Predictions are mapped back to the target's original scale.

mod importance;
mod lasso;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use importance::{permutation_importance, r2_score, PermutationImportance, DEFAULT_REPEATS};
pub use lasso::{lambda_max, lasso_cd, lasso_gram, lasso_objective, Gram, LassoFit, LassoOptions};

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_FOLDS: usize = 5;
/// Standard deviations below this are treated as constant columns.
pub const STD_FLOOR: f64 = 1e-12;

/// Which activations predict which model's concepts: `Src → Tgt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "1->2")]
    OneToTwo,
    #[serde(rename = "2->1")]
    TwoToOne,
    #[serde(rename = "1->1")]
    OneToOne,
    #[serde(rename = "2->2")]
    TwoToTwo,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::OneToTwo,
        Direction::TwoToOne,
        Direction::OneToOne,
        Direction::TwoToTwo,
    ];

    /// `(source model, target model)`, 1-based.
    pub fn models(self) -> (u8, u8) {
        match self {
            Direction::OneToTwo => (1, 2),
            Direction::TwoToOne => (2, 1),
            Direction::OneToOne => (1, 1),
            Direction::TwoToTwo => (2, 2),
        }
    }

    pub fn is_cross(self) -> bool {
        let (s, t) = self.models();
        s != t
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::OneToTwo => "1->2",
            Direction::TwoToOne => "2->1",
            Direction::OneToOne => "1->1",
            Direction::TwoToTwo => "2->2",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Column-standardized matrix with the statistics used.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub data: Array2<f64>,
    pub mean: Array1<f64>,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: Array1<f64>,
    pub constant: Vec<bool>,
}

/// Per-column mean 0 and (population) standard deviation 1. Constant columns
/// become zeros and are flagged.
pub fn standardize(x: ArrayView2<f64>) -> Standardized {
    let n = x.nrows().max(1) as f64;
    let mean = x.sum_axis(Axis(0)) / n;
    let mut std = Array1::zeros(x.ncols());
    let mut constant = vec![false; x.ncols()];
    for (j, col) in x.columns().into_iter().enumerate() {
        let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
        let s = var.sqrt();
        if s < STD_FLOOR {
            std[j] = STD_FLOOR;
            constant[j] = true;
        } else {
            std[j] = s;
        }
    }
    let data = apply_standardization(x, &mean, &std, &constant);
    Standardized {
        data,
        mean,
        std,
        constant,
    }
}

fn apply_standardization(
    x: ArrayView2<f64>,
    mean: &Array1<f64>,
    std: &Array1<f64>,
    constant: &[bool],
) -> Array2<f64> {
    let mut out = x.to_owned();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        if constant[j] {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|v| (v - mean[j]) / std[j]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorOptions {
    pub lambda: f64,
    pub folds: usize,
    pub seed: u64,
    pub lasso: LassoOptions,
}

impl Default for RegressorOptions {
    fn default() -> Self {
        RegressorOptions {
            lambda: DEFAULT_LAMBDA,
            folds: DEFAULT_FOLDS,
            seed: 0,
            lasso: LassoOptions::default(),
        }
    }
}

/// Averaged sparse map from standardized source activations to standardized
/// concept coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptRegressor {
    /// `d_src × k`
    pub weights: Array2<f64>,
    pub lambda: f64,
    pub x_mean: Array1<f64>,
    pub x_std: Array1<f64>,
    pub x_constant: Vec<bool>,
    pub y_mean: Array1<f64>,
    pub y_std: Array1<f64>,
    pub y_constant: Vec<bool>,
    pub folds: usize,
    pub direction: Direction,
    /// Per-fold, per-target count of lasso problems that hit `max_iter`.
    pub unconverged: usize,
}

/// Deterministic near-equal partition of `0..n` into `folds` groups.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        out.push(fold);
        start += len;
    }
    out
}

/// Fits `folds` lasso maps (one per fold, each trained on that fold alone)
/// from `a_src` to every column of `u_tgt` and averages their weights.
pub fn fit_concept_regressor(
    a_src: ArrayView2<f64>,
    u_tgt: ArrayView2<f64>,
    direction: Direction,
    opts: &RegressorOptions,
) -> Result<ConceptRegressor> {
    let n = a_src.nrows();
    if u_tgt.nrows() != n {
        return Err(Error::Dimension(format!(
            "source has {n} rows, targets have {}",
            u_tgt.nrows()
        )));
    }
    if opts.folds == 0 || n < opts.folds {
        return Err(Error::InvalidArgument(format!(
            "{n} rows cannot be split into {} folds",
            opts.folds
        )));
    }
    let x = standardize(a_src);
    let y = standardize(u_tgt);
    let (d, k) = (a_src.ncols(), u_tgt.ncols());

    let mut weights = Array2::<f64>::zeros((d, k));
    let mut unconverged = 0;
    for fold in fold_assignment(n, opts.folds, opts.seed) {
        let xf = x.data.select(Axis(0), &fold);
        let yf = y.data.select(Axis(0), &fold);
        let gram = Gram::new(xf.view());
        let xty = xf.t().dot(&yf) / fold.len() as f64;
        for t in 0..k {
            if y.constant[t] {
                continue;
            }
            let fit = lasso_gram(&gram, xty.column(t), opts.lambda, &opts.lasso);
            unconverged += usize::from(!fit.converged);
            weights.column_mut(t).scaled_add(1.0, &fit.weights);
        }
    }
    weights /= opts.folds as f64;

    Ok(ConceptRegressor {
        weights,
        lambda: opts.lambda,
        x_mean: x.mean,
        x_std: x.std,
        x_constant: x.constant,
        y_mean: y.mean,
        y_std: y.std,
        y_constant: y.constant,
        folds: opts.folds,
        direction,
        unconverged,
    })
}

/// Standardizes `a_eval` with the training statistics, applies the averaged
/// weights, and unnormalizes to the target scale.
pub fn predict_coefficients(reg: &ConceptRegressor, a_eval: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a_eval.ncols() != reg.weights.nrows() {
        return Err(Error::Dimension(format!(
            "regressor expects {} features, got {}",
            reg.weights.nrows(),
            a_eval.ncols()
        )));
    }
    let x = apply_standardization(a_eval, &reg.x_mean, &reg.x_std, &reg.x_constant);
    let mut pred = x.dot(&reg.weights);
    for (t, mut col) in pred.columns_mut().into_iter().enumerate() {
        let (m, s) = (reg.y_mean[t], reg.y_std[t]);
        if reg.y_constant[t] {
            col.fill(m);
        } else {
            col.mapv_inplace(|v| v * s + m);
        }
    }
    Ok(pred)
}

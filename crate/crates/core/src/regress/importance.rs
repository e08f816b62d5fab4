use ndarray::{Array1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{predict_coefficients, ConceptRegressor};
use crate::error::{Error, Result};

pub const DEFAULT_REPEATS: usize = 5;

/// Mean and spread of the score drop caused by shuffling each source feature.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationImportance {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    pub baseline: f64,
}

/// Coefficient of determination averaged uniformly over target columns.
///
/// A constant target column scores 1 when predicted exactly and 0 otherwise.
pub fn r2_score(y: ArrayView2<f64>, pred: ArrayView2<f64>) -> f64 {
    let k = y.ncols();
    if k == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (yc, pc) in y.columns().into_iter().zip(pred.columns()) {
        let mean = yc.mean().unwrap_or(0.0);
        let ss_tot: f64 = yc.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = yc.iter().zip(pc.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        total += if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else if ss_res == 0.0 {
            1.0
        } else {
            0.0
        };
    }
    total / k as f64
}

/// Permutation feature importance: for every source feature, the decrease in
/// R² after shuffling that column, over `repeats` seeded shuffles.
pub fn permutation_importance(
    reg: &ConceptRegressor,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    repeats: usize,
    seed: u64,
) -> Result<PermutationImportance> {
    if x.nrows() != y.nrows() || y.ncols() != reg.weights.ncols() {
        return Err(Error::Dimension(format!(
            "X is {:?}, y is {:?}, regressor maps {:?}",
            x.dim(),
            y.dim(),
            reg.weights.dim()
        )));
    }
    let repeats = repeats.max(1);
    let baseline = r2_score(y, predict_coefficients(reg, x)?.view());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x.ncols();
    let mut mean = Array1::zeros(d);
    let mut std = Array1::zeros(d);
    let mut shuffled = x.to_owned();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    for j in 0..d {
        let mut drops = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            order.shuffle(&mut rng);
            for (i, &src) in order.iter().enumerate() {
                shuffled[[i, j]] = x[[src, j]];
            }
            let score = r2_score(y, predict_coefficients(reg, shuffled.view())?.view());
            drops.push(baseline - score);
        }
        shuffled.column_mut(j).assign(&x.column(j));
        let m = drops.iter().sum::<f64>() / repeats as f64;
        mean[j] = m;
        std[j] = (drops.iter().map(|v| (v - m).powi(2)).sum::<f64>() / repeats as f64).sqrt();
    }
    Ok(PermutationImportance {
        mean,
        std,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::{fit_concept_regressor, Direction, RegressorOptions};
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
    }

    #[test]
    fn r2_of_perfect_prediction_is_one() {
        let y = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        assert_eq!(r2_score(y.view(), y.view()), 1.0);
    }

    #[test]
    fn single_informative_feature_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(&mut rng, (200, 5));
        let y = x.column(2).to_owned().insert_axis(ndarray::Axis(1));
        let reg = fit_concept_regressor(x.view(), y.view(), Direction::OneToTwo, &RegressorOptions::default())
            .unwrap();
        let imp = permutation_importance(&reg, x.view(), y.view(), 5, 0).unwrap();
        let best = imp.mean.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, 2);
        for j in [0, 1, 3, 4] {
            assert!(imp.mean[2] > imp.mean[j]);
            if reg.weights[[j, 0]] == 0.0 {
                assert_eq!(imp.mean[j], 0.0);
            }
        }
    }

    #[test]
    fn near_duplicate_columns_split_importance() {
        // Two noisy copies of one signal: a least-squares fit averages them,
        // so each carries about half the weight of a lone copy.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let signal = gaussian(&mut rng, (400, 1));
        let noise = gaussian(&mut rng, (400, 2)) * 0.3;
        let single = ndarray::concatenate![ndarray::Axis(1), &signal + &noise.column(0).insert_axis(ndarray::Axis(1)), gaussian(&mut rng, (400, 1))];
        let pair = ndarray::concatenate![ndarray::Axis(1), &signal + &noise.column(0).insert_axis(ndarray::Axis(1)), &signal + &noise.column(1).insert_axis(ndarray::Axis(1))];
        let y = signal.clone();
        let opts = RegressorOptions {
            lambda: 0.0,
            ..Default::default()
        };
        let reg1 = fit_concept_regressor(single.view(), y.view(), Direction::OneToTwo, &opts).unwrap();
        let reg2 = fit_concept_regressor(pair.view(), y.view(), Direction::OneToTwo, &opts).unwrap();
        let imp1 = permutation_importance(&reg1, single.view(), y.view(), 5, 0).unwrap();
        let imp2 = permutation_importance(&reg2, pair.view(), y.view(), 5, 0).unwrap();
        assert!(imp2.mean[0] > 0.0 && imp2.mean[1] > 0.0);
        assert!(imp2.mean[0] < imp1.mean[0]);
        assert!(imp2.mean[1] < imp1.mean[0]);
    }
}

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_rank, clamp_nonneg, debug_check_monotone, flush_update, squared_residual, zero_empty_rows,
    ConceptDecomposition, FactorizeOptions, Method,
};
use crate::error::{Error, Result};
use crate::linalg::truncated_svd;

/// Non-negative matrix factorization by multiplicative updates.
///
/// Minimizes `‖A − U·W‖²_F` over `U, W ≥ 0`, starting from an NNDSVD-a
/// initialization (uniform random from `seed` if the SVD fails). Each
/// iteration updates `W` then `U`; every multiplicative step is
/// non-increasing in the objective.
pub fn nnmf(a: ArrayView2<f64>, k: usize, opts: &FactorizeOptions) -> Result<ConceptDecomposition> {
    check_rank(a, k)?;
    if a.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(
            "nnmf requires a non-negative matrix".into(),
        ));
    }
    let (n, d) = a.dim();
    if a.iter().all(|&v| v == 0.0) {
        return Ok(ConceptDecomposition {
            u: Array2::zeros((n, k)),
            w: Array2::zeros((k, d)),
            method: Method::Nnmf,
            k,
            recon_error: 0.0,
            iterations: 0,
            objective_trace: vec![0.0],
        });
    }

    let (mut u, mut w) = nndsvda(a, k).unwrap_or_else(|| random_init(a, k, opts.seed));
    zero_empty_rows(a, &mut u);

    let a_norm_sq = a.iter().map(|v| v * v).sum::<f64>();
    let mut objective = squared_residual(a, &u, &w);
    let mut trace = vec![objective];
    let mut iterations = 0;
    let inner = inner_iterations(n, d, k);
    while iterations < opts.max_iter && objective > 0.0 {
        // W ← W ⊙ (Uᵀ·A) / (Uᵀ·U·W), repeated on the fixed products
        let uta = u.t().dot(&a);
        let utu = u.t().dot(&u);
        repeated_step(&mut w, inner, |w| (uta.clone(), utu.dot(w)));
        // U ← U ⊙ (A·Wᵀ) / (U·W·Wᵀ)
        let awt = a.dot(&w.t());
        let wwt = w.dot(&w.t());
        repeated_step(&mut u, inner, |u| (awt.clone(), u.dot(&wwt)));

        iterations += 1;
        let next = squared_residual(a, &u, &w);
        debug_check_monotone(objective, next, a_norm_sq, k);
        trace.push(next);
        let decrease = (objective - next) / objective;
        objective = next;
        if decrease < opts.tol {
            break;
        }
    }

    let recon_error = super::reconstruction_error(a, u.view(), w.view())?;
    Ok(ConceptDecomposition {
        u,
        w,
        method: Method::Nnmf,
        k,
        recon_error,
        iterations,
        objective_trace: trace,
    })
}

/// Accelerated multiplicative updates (Gillis & Glineur, 2012): the products
/// that involve `A` are computed once per outer iteration and reused by up to
/// `max_inner` cheap updates of one factor. Updates stop early once a step
/// moves the factor less than 1% of the first step.
fn repeated_step<F>(x: &mut Array2<f64>, max_inner: usize, mut terms: F)
where
    F: FnMut(&Array2<f64>) -> (Array2<f64>, Array2<f64>),
{
    let mut first = None;
    for _ in 0..max_inner {
        let before = x.clone();
        let (num, den) = terms(x);
        multiplicative_step(x, &num, &den);
        let moved = crate::linalg::frobenius_distance(x.view(), before.view());
        let first = *first.get_or_insert(moved);
        if moved <= 0.01 * first {
            break;
        }
    }
}

/// Inner update budget: one outer product costs about `n·d·k`, one inner
/// update about `(n + d)·k²`.
fn inner_iterations(n: usize, d: usize, k: usize) -> usize {
    let ratio = (n * d) as f64 / ((n + d) * k) as f64;
    (1.0 + 2.0 * (1.0 + ratio)).floor().clamp(1.0, 30.0) as usize
}

/// `x ← x ⊙ num / den`, leaving entries with a zero denominator untouched.
///
/// A zero denominator only occurs when the entry itself is zero or its
/// partner factor row/column is zero, in which case it does not affect the
/// objective.
fn multiplicative_step(x: &mut Array2<f64>, num: &Array2<f64>, den: &Array2<f64>) {
    Zip::from(x).and(num).and(den).for_each(|x, &num, &den| {
        if *x > 0.0 && den > 0.0 {
            *x = flush_update(*x * (num / den));
        }
    });
}

/// NNDSVD with zeros filled by the matrix mean (Boutsidis & Gallopoulos, 2008).
fn nndsvda(a: ArrayView2<f64>, k: usize) -> Option<(Array2<f64>, Array2<f64>)> {
    let (n, d) = a.dim();
    let (left, sigma, right) = truncated_svd(a, k)?;
    let mut u = Array2::<f64>::zeros((n, k));
    let mut w = Array2::<f64>::zeros((k, d));

    let s0 = sigma[0].sqrt();
    // The leading singular pair of a non-negative matrix can be chosen non-negative.
    let sign = if left.column(0).sum() < 0.0 { -1.0 } else { 1.0 };
    u.column_mut(0)
        .assign(&left.column(0).mapv(|v| s0 * clamp_nonneg(sign * v)));
    w.row_mut(0)
        .assign(&right.row(0).mapv(|v| s0 * clamp_nonneg(sign * v)));

    for j in 1..k {
        let x = left.column(j);
        let y = right.row(j);
        let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
        let xp = norm(&mut x.iter().map(|&v| clamp_nonneg(v)));
        let xn = norm(&mut x.iter().map(|&v| clamp_nonneg(-v)));
        let yp = norm(&mut y.iter().map(|&v| clamp_nonneg(v)));
        let yn = norm(&mut y.iter().map(|&v| clamp_nonneg(-v)));
        let (mp, mn) = (xp * yp, xn * yn);
        let (sgn, xnorm, ynorm, m) = if mp > mn {
            (1.0, xp, yp, mp)
        } else {
            (-1.0, xn, yn, mn)
        };
        if m == 0.0 {
            continue;
        }
        let scale = (sigma[j] * m).sqrt();
        u.column_mut(j)
            .assign(&x.mapv(|v| scale * clamp_nonneg(sgn * v) / xnorm));
        w.row_mut(j)
            .assign(&y.mapv(|v| scale * clamp_nonneg(sgn * v) / ynorm));
    }

    let mean = a.mean().unwrap_or(0.0);
    u.mapv_inplace(|v| if v == 0.0 { mean } else { v });
    w.mapv_inplace(|v| if v == 0.0 { mean } else { v });
    Some((u, w))
}

fn random_init(a: ArrayView2<f64>, k: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let (n, d) = a.dim();
    let scale = (a.mean().unwrap_or(0.0) / k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Array2::from_shape_simple_fn((n, k), || scale * rng.gen::<f64>());
    let w = Array2::from_shape_simple_fn((k, d), || scale * rng.gen::<f64>());
    (u, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn planted(seed: u64, n: usize, d: usize, k: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u0 = Array2::from_shape_simple_fn((n, k), || rng.gen::<f64>());
        let w0 = Array2::from_shape_simple_fn((k, d), || rng.gen::<f64>());
        u0.dot(&w0)
    }

    #[test]
    fn recovers_planted_low_rank() {
        let a = planted(1, 60, 40, 5);
        let dec = nnmf(a.view(), 5, &FactorizeOptions::default()).unwrap();
        assert!(dec.relative_error(a.view()) <= 1e-2, "{}", dec.relative_error(a.view()));
        assert!(dec.u.iter().all(|&v| v >= 0.0 && v.is_sign_positive()));
        assert!(dec.w.iter().all(|&v| v >= 0.0 && v.is_sign_positive()));
    }

    #[test]
    fn objective_never_increases() {
        let a = planted(2, 30, 20, 4).mapv(|v| v + 0.05);
        let opts = FactorizeOptions {
            max_iter: 200,
            tol: 0.0,
            seed: 0,
        };
        let dec = nnmf(a.view(), 6, &opts).unwrap();
        for pair in dec.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{pair:?}");
        }
    }

    #[test]
    fn zero_matrix() {
        let a = Array2::<f64>::zeros((5, 4));
        let dec = nnmf(a.view(), 2, &FactorizeOptions::default()).unwrap();
        assert!(dec.u.iter().all(|&v| v == 0.0));
        assert!(dec.w.iter().all(|&v| v >= 0.0));
        assert_eq!(dec.recon_error, 0.0);
    }

    #[test]
    fn stored_error_matches_factors() {
        let a = planted(3, 20, 10, 3);
        let dec = nnmf(a.view(), 2, &FactorizeOptions::default()).unwrap();
        let recomputed = super::super::reconstruction_error(a.view(), dec.u.view(), dec.w.view())
            .unwrap();
        assert!((dec.recon_error - recomputed).abs() <= 1e-9 * recomputed);
    }

    #[test]
    fn deterministic() {
        let a = planted(4, 25, 12, 3);
        let opts = FactorizeOptions::default();
        let x = nnmf(a.view(), 3, &opts).unwrap();
        let y = nnmf(a.view(), 3, &opts).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rejects_bad_input() {
        let a = Array2::from_elem((3, 3), -1.0);
        assert!(nnmf(a.view(), 1, &FactorizeOptions::default()).is_err());
        let a = Array2::from_elem((3, 3), 1.0);
        assert!(nnmf(a.view(), 4, &FactorizeOptions::default()).is_err());
        assert!(nnmf(a.view(), 0, &FactorizeOptions::default()).is_err());
    }
}

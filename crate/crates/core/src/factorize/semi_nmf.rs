use ndarray::{Array2, ArrayView2, Zip};

use super::kmeans::{kmeans, membership};
use super::{
    check_rank, clamp_nonneg, debug_check_monotone, flush_update, squared_residual, zero_empty_rows,
    ConceptDecomposition, FactorizeOptions, Method,
};
use crate::error::Result;
use crate::linalg::solve_symmetric_many;

const KMEANS_RESTARTS: usize = 10;
/// Offset added to one-hot cluster memberships at initialization.
const MEMBERSHIP_OFFSET: f64 = 0.2;

/// Semi-NMF (Ding, Li & Jordan, 2010): `A ≈ U·W` with `U ≥ 0` and `W` free.
///
/// `U` starts from k-means memberships plus 0.2. Each iteration solves for
/// `W` by least squares, then applies the multiplicative rule
///
/// ```text
/// U ← U ⊙ sqrt( ([A·Wᵀ]⁺ + U·[W·Wᵀ]⁻) / ([A·Wᵀ]⁻ + U·[W·Wᵀ]⁺) )
/// ```
///
/// where `[·]⁺`/`[·]⁻` are the positive and negative parts.
pub fn semi_nmf(
    a: ArrayView2<f64>,
    k: usize,
    opts: &FactorizeOptions,
) -> Result<ConceptDecomposition> {
    check_rank(a, k)?;
    let clusters = kmeans(a, k, KMEANS_RESTARTS, opts.seed);
    let mut u = membership(&clusters.labels, k).mapv(|v| v + MEMBERSHIP_OFFSET);
    zero_empty_rows(a, &mut u);

    let mut w = least_squares_basis(a, &u);
    let a_norm_sq = a.iter().map(|v| v * v).sum::<f64>();
    let mut objective = squared_residual(a, &u, &w);
    let mut trace = vec![objective];
    let mut iterations = 0;
    while iterations < opts.max_iter && objective > 0.0 {
        let awt = a.dot(&w.t());
        let wwt = w.dot(&w.t());
        let pos = wwt.mapv(clamp_nonneg);
        let neg = wwt.mapv(|v| clamp_nonneg(-v));
        let u_neg = u.dot(&neg);
        let u_pos = u.dot(&pos);
        Zip::from(&mut u)
            .and(&awt)
            .and(&u_neg)
            .and(&u_pos)
            .for_each(|x, &awt, &un, &up| {
                if *x > 0.0 {
                    let den = clamp_nonneg(-awt) + up;
                    if den > 0.0 {
                        *x = flush_update(*x * ((clamp_nonneg(awt) + un) / den).sqrt());
                    }
                }
            });
        w = least_squares_basis(a, &u);

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
        method: Method::SemiNmf,
        k,
        recon_error,
        iterations,
        objective_trace: trace,
    })
}

/// `W = (Uᵀ·U)⁻¹·Uᵀ·A`, with a pseudo-inverse when `Uᵀ·U` is singular.
fn least_squares_basis(a: ArrayView2<f64>, u: &Array2<f64>) -> Array2<f64> {
    solve_symmetric_many(&u.t().dot(u), &u.t().dot(&a))
}

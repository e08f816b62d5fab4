//! Small dense linear-algebra helpers bridging `ndarray` and `nalgebra`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};

pub(crate) fn to_na(m: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Solves `g x = b` for symmetric `g`, by Cholesky when positive definite and
/// by SVD least squares otherwise.
pub(crate) fn solve_symmetric(g: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = g.clone().cholesky() {
        let mut x = chol.solve(b);
        // one step of iterative refinement
        let r = b - g * &x;
        x += chol.solve(&r);
        return x;
    }
    let svd = g.clone().svd(true, true);
    let eps = f64::EPSILON * g.nrows() as f64 * svd.singular_values.max();
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(b.len()))
}

/// Solves `g X = rhs` (columns of `rhs` independently) for symmetric `g`.
pub(crate) fn solve_symmetric_many(g: &Array2<f64>, rhs: &Array2<f64>) -> Array2<f64> {
    let g = to_na(g.view());
    let rhs = to_na(rhs.view());
    let x = if let Some(chol) = g.clone().cholesky() {
        let mut x = chol.solve(&rhs);
        let r = &rhs - &g * &x;
        x += chol.solve(&r);
        x
    } else {
        let svd = g.clone().svd(true, true);
        let eps = f64::EPSILON * g.nrows() as f64 * svd.singular_values.max();
        svd.solve(&rhs, eps)
            .unwrap_or_else(|_| DMatrix::zeros(rhs.nrows(), rhs.ncols()))
    };
    from_na(&x)
}

/// Moore–Penrose pseudo-inverse.
pub(crate) fn pinv(m: &Array2<f64>) -> Array2<f64> {
    let na = to_na(m.view());
    let svd = na.svd(true, true);
    let eps = f64::EPSILON * m.nrows().max(m.ncols()) as f64 * svd.singular_values.max();
    from_na(&svd.pseudo_inverse(eps).expect("svd computed both factors"))
}

/// Leading `k` singular triplets `(u, s, vᵀ)` of `m`, or `None` if the SVD
/// fails to converge.
pub(crate) fn truncated_svd(
    m: ArrayView2<f64>,
    k: usize,
) -> Option<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let svd = nalgebra::SVD::try_new(to_na(m), true, true, f64::EPSILON, 10_000)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let (u, vt) = (svd.u?, svd.v_t?);
    let order = &order[..k];
    let u = Array2::from_shape_fn((u.nrows(), k), |(i, j)| u[(i, order[j])]);
    let s = Array1::from_iter(order.iter().map(|&j| svd.singular_values[j]));
    let vt = Array2::from_shape_fn((k, vt.ncols()), |(i, j)| vt[(order[i], j)]);
    Some((u, s, vt))
}

/// Frobenius norm of `a - b`.
pub(crate) fn frobenius_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A correlation coefficient; zero-variance inputs give `0` with `degenerate` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

impl Correlation {
    const DEGENERATE: Correlation = Correlation {
        value: 0.0,
        degenerate: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

fn check_pair(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "correlating vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least two observations".into(),
        ));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<Correlation> {
    check_pair(u, v)?;
    Ok(pearson_unchecked(u, v))
}

fn is_flat(sum_sq: f64, n: f64, scale: f64) -> bool {
    sum_sq == 0.0 || (sum_sq / n).sqrt() <= 1e-13 * scale
}

fn pearson_unchecked(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Correlation {
    let n = u.len() as f64;
    let mu = u.sum() / n;
    let mv = v.sum() / n;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v.iter()) {
        let (da, db) = (a - mu, b - mv);
        suv += da * db;
        suu += da * da;
        svv += db * db;
    }
    let scale_u = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale_v = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if is_flat(suu, n, scale_u) || is_flat(svv, n, scale_v) {
        return Correlation::DEGENERATE;
    }
    // Identical (or negated) columns are exactly ±1; the general formula can
    // land an ulp short of it.
    let value = if suu == svv && suv.abs() == suu {
        suv.signum()
    } else {
        (suv / (suu.sqrt() * svv.sqrt())).clamp(-1.0, 1.0)
    };
    Correlation {
        value,
        degenerate: false,
    }
}

/// Ranks starting at 1, ties sharing the average of their positions.
pub fn average_ranks(v: ArrayView1<f64>) -> Array1<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = Array1::zeros(v.len());
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<Correlation> {
    check_pair(u, v)?;
    Ok(pearson_unchecked(
        average_ranks(u).view(),
        average_ranks(v).view(),
    ))
}

pub fn correlate(kind: CorrelationKind, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<Correlation> {
    match kind {
        CorrelationKind::Pearson => pearson(u, v),
        CorrelationKind::Spearman => spearman(u, v),
    }
}

/// Correlations between every column of `U₁` and every column of `U₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    /// `k₁ × k₂`
    pub r: Array2<f64>,
    pub kind: CorrelationKind,
    /// Entries computed from a zero-variance column (stored as 0).
    pub degenerate: Array2<bool>,
}

pub fn correlation_matrix(
    u1: ArrayView2<f64>,
    u2: ArrayView2<f64>,
    kind: CorrelationKind,
) -> Result<CorrelationMatrix> {
    if u1.nrows() != u2.nrows() {
        return Err(Error::Dimension(format!(
            "coefficient matrices have {} and {} rows",
            u1.nrows(),
            u2.nrows()
        )));
    }
    if u1.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least two observations".into(),
        ));
    }
    let prepare = |m: ArrayView2<f64>| -> Vec<Array1<f64>> {
        m.columns()
            .into_iter()
            .map(|c| match kind {
                CorrelationKind::Pearson => c.to_owned(),
                CorrelationKind::Spearman => average_ranks(c),
            })
            .collect()
    };
    let (c1, c2) = (prepare(u1), prepare(u2));
    let mut r = Array2::zeros((c1.len(), c2.len()));
    let mut degenerate = Array2::from_elem((c1.len(), c2.len()), false);
    for (i, a) in c1.iter().enumerate() {
        for (j, b) in c2.iter().enumerate() {
            let c = pearson_unchecked(a.view(), b.view());
            r[[i, j]] = c.value;
            degenerate[[i, j]] = c.degenerate;
        }
    }
    Ok(CorrelationMatrix {
        r,
        kind,
        degenerate,
    })
}

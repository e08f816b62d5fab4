//! The replacement test: swap one concept's coefficients for predicted ones,
//! reconstruct, run the linear head, and measure how decisions move.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::actio::LinearHead;
use crate::error::{Error, Result};
use crate::regress::Direction;

/// Behavioral change caused by replacing one concept's coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementOutcome {
    pub class_id: String,
    pub concept_index: usize,
    /// Cross direction that produced the replacing coefficients.
    pub direction: Direction,
    pub delta_l2: f64,
    pub delta_kl: f64,
    pub match_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_pearson: Option<f64>,
}

/// Argument order of the KL divergence between baseline and cross logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(softmax(z_self) ‖ softmax(z_cross))
    #[default]
    SelfCross,
    /// KL(softmax(z_cross) ‖ softmax(z_self))
    CrossSelf,
}

/// `Z = A · weights + bias`, one row of logits per activation row.
pub fn head_logits(a: ArrayView2<f64>, head: &LinearHead) -> Result<Array2<f64>> {
    if a.ncols() != head.weights.nrows() {
        return Err(Error::Dimension(format!(
            "head expects {} inputs, activations have {} columns",
            head.weights.nrows(),
            a.ncols()
        )));
    }
    Ok(a.dot(&head.weights) + &head.bias)
}

/// `log softmax(z)`, stabilized by subtracting the maximum.
pub fn log_softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.mapv(|v| v - lse)
}

pub fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    log_softmax(z).mapv(f64::exp)
}

/// `KL(softmax(z_p) ‖ softmax(z_q))`, clamped at zero against rounding.
pub fn kl_divergence(z_p: ArrayView1<f64>, z_q: ArrayView1<f64>) -> Result<f64> {
    if z_p.len() != z_q.len() || z_p.is_empty() {
        return Err(Error::Dimension(format!(
            "logit vectors of length {} and {}",
            z_p.len(),
            z_q.len()
        )));
    }
    if z_p.iter().chain(z_q.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let (lp, lq) = (log_softmax(z_p), log_softmax(z_q));
    let kl: f64 = lp
        .iter()
        .zip(lq.iter())
        .map(|(a, b)| a.exp() * (a - b))
        .sum();
    Ok(kl.max(0.0))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax agrees between two score matrices.
pub fn match_accuracy(y_a: ArrayView2<f64>, y_b: ArrayView2<f64>) -> Result<f64> {
    if y_a.dim() != y_b.dim() || y_a.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "comparing predictions of shape {:?} and {:?}",
            y_a.dim(),
            y_b.dim()
        )));
    }
    let hits = y_a
        .rows()
        .into_iter()
        .zip(y_b.rows())
        .filter(|(a, b)| argmax(*a) == argmax(*b))
        .count();
    Ok(hits as f64 / y_a.nrows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReplacementOptions {
    pub kl_direction: KlDirection,
}

/// Inputs for one model's concepts, all over the same evaluation rows.
#[derive(Debug, Clone, Copy)]
pub struct ReplacementInput<'a> {
    pub class_id: &'a str,
    /// Cross direction whose predictions replace the true coefficients.
    pub direction: Direction,
    pub u_true: ArrayView2<'a, f64>,
    pub u_self_pred: ArrayView2<'a, f64>,
    pub u_cross_pred: ArrayView2<'a, f64>,
    /// `k × d` concept basis of the model owning the concepts.
    pub basis: ArrayView2<'a, f64>,
    pub head: &'a LinearHead,
    /// Per-concept ΔPearson to copy into the outcomes.
    pub delta_pearson: Option<&'a [f64]>,
}

/// For every concept i, replaces column i of the true coefficients by its
/// same-model prediction (baseline) and by its cross-model prediction, and
/// compares the two reconstructions and their head outputs.
pub fn replacement_test(input: &ReplacementInput, opts: &ReplacementOptions) -> Result<Vec<ReplacementOutcome>> {
    let (n, k) = input.u_true.dim();
    for (what, m) in [("self prediction", input.u_self_pred), ("cross prediction", input.u_cross_pred)] {
        if m.dim() != (n, k) {
            return Err(Error::Dimension(format!(
                "{what} is {:?}, true coefficients are {:?}",
                m.dim(),
                (n, k)
            )));
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("replacement test needs at least one row".into()));
    }
    if input.basis.nrows() != k {
        return Err(Error::Dimension(format!(
            "basis has {} rows for {k} concepts",
            input.basis.nrows()
        )));
    }
    if let Some(dp) = input.delta_pearson {
        if dp.len() != k {
            return Err(Error::Dimension(format!("{} ΔPearson values for {k} concepts", dp.len())));
        }
    }
    // Logits are affine in the coefficients: Z(Ū) = Ū·(W·Wh) + b. Only one
    // column changes per replacement, so each variant is a rank-1 update.
    let concept_logits = input.basis.dot(&input.head.weights);
    if concept_logits.nrows() != k || input.basis.ncols() != input.head.weights.nrows() {
        return Err(Error::Dimension("basis and head disagree on activation width".into()));
    }
    let base = input.u_true.dot(&concept_logits) + &input.head.bias;

    let mut outcomes = Vec::with_capacity(k);
    for i in 0..k {
        let row_norm = input.basis.row(i).dot(&input.basis.row(i)).sqrt();
        let m_i = concept_logits.row(i);
        let mut l2 = 0.0;
        let mut kl = 0.0;
        let mut hits = 0usize;
        for r in 0..n {
            let t = input.u_true[[r, i]];
            let (s, c) = (input.u_self_pred[[r, i]], input.u_cross_pred[[r, i]]);
            l2 += (c - s).abs() * row_norm;
            let z_self = &base.row(r) + &(&m_i * (s - t));
            let z_cross = &base.row(r) + &(&m_i * (c - t));
            kl += match opts.kl_direction {
                KlDirection::SelfCross => kl_divergence(z_self.view(), z_cross.view())?,
                KlDirection::CrossSelf => kl_divergence(z_cross.view(), z_self.view())?,
            };
            hits += usize::from(argmax(z_self.view()) == argmax(z_cross.view()));
        }
        outcomes.push(ReplacementOutcome {
            class_id: input.class_id.to_string(),
            concept_index: i,
            direction: input.direction,
            delta_l2: l2 / n as f64,
            delta_kl: kl / n as f64,
            match_accuracy: hits as f64 / n as f64,
            delta_pearson: input.delta_pearson.map(|dp| dp[i]),
        });
    }
    Ok(outcomes)
}

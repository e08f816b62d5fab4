//! Concept importance by integrated gradients through the concept basis and
//! a linear classification head.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::actio::LinearHead;
use crate::error::{Error, Result};
use crate::replace::softmax;

/// Integration steps used unless configured otherwise.
pub const DEFAULT_STEPS: usize = 30;

/// Importance of one concept for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptImportance {
    pub class_id: String,
    pub concept_index: usize,
    pub importance: f64,
    pub steps: usize,
}

/// The scalar being attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionTarget {
    /// Softmax probability of the target class.
    #[default]
    Probability,
    /// Raw target-class logit (constant gradient).
    Logit,
}

/// How per-row attributions combine into one value per concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CigOptions {
    pub steps: usize,
    pub target: AttributionTarget,
    pub aggregation: Aggregation,
}

impl Default for CigOptions {
    fn default() -> Self {
        CigOptions {
            steps: DEFAULT_STEPS,
            target: AttributionTarget::Probability,
            aggregation: Aggregation::Mean,
        }
    }
}

/// Head logits of the activation reconstructed from one coefficient row.
pub fn concept_logits(u_row: ArrayView1<f64>, basis: ArrayView2<f64>, head: &LinearHead) -> Result<Array1<f64>> {
    if u_row.len() != basis.nrows() || basis.ncols() != head.weights.nrows() {
        return Err(Error::Dimension(format!(
            "coefficients of length {}, basis {:?}, head input {}",
            u_row.len(),
            basis.dim(),
            head.weights.nrows()
        )));
    }
    Ok(u_row.dot(&basis).dot(&head.weights) + &head.bias)
}

fn check_inputs(u: ArrayView2<f64>, basis: ArrayView2<f64>, head: &LinearHead, target_class: usize) -> Result<()> {
    if u.ncols() != basis.nrows() || basis.ncols() != head.weights.nrows() {
        return Err(Error::Dimension(format!(
            "coefficients {:?}, basis {:?}, head input {}",
            u.dim(),
            basis.dim(),
            head.weights.nrows()
        )));
    }
    if target_class >= head.weights.ncols() {
        return Err(Error::InvalidArgument(format!(
            "target class {target_class} out of range for {} classes",
            head.weights.ncols()
        )));
    }
    Ok(())
}

/// Per-row attributions `φ(r) = r ⊙ mean_α ∇F(α r)` (`n × k`), with the path
/// integral approximated by a midpoint Riemann sum over `steps` points and a
/// zero baseline.
pub fn row_attributions(
    u: ArrayView2<f64>,
    basis: ArrayView2<f64>,
    head: &LinearHead,
    target_class: usize,
    opts: &CigOptions,
) -> Result<Array2<f64>> {
    check_inputs(u, basis, head, target_class)?;
    if opts.steps == 0 {
        return Err(Error::InvalidArgument("integration needs at least one step".into()));
    }
    // logits as a function of the coefficients: z(r) = r·M + b
    let m = basis.dot(&head.weights);
    let m_target = m.column(target_class).to_owned();
    let mut phi = Array2::zeros(u.dim());
    for (r, mut out) in u.rows().into_iter().zip(phi.rows_mut()) {
        let grad = match opts.target {
            AttributionTarget::Logit => m_target.clone(),
            AttributionTarget::Probability => {
                let z_r = r.dot(&m);
                let mut acc = Array1::<f64>::zeros(head.weights.ncols());
                for s in 0..opts.steps {
                    let alpha = (s as f64 + 0.5) / opts.steps as f64;
                    let p = softmax((&z_r * alpha + &head.bias).view());
                    // ∂p_t/∂z = p_t (e_t − p)
                    let pt = p[target_class];
                    let mut dz = p.mapv(|v| -pt * v);
                    dz[target_class] += pt;
                    acc += &dz;
                }
                m.dot(&acc) / opts.steps as f64
            }
        };
        out.assign(&(&r * &grad));
    }
    Ok(phi)
}

fn aggregate(phi: &Array2<f64>, aggregation: Aggregation) -> Array1<f64> {
    match aggregation {
        Aggregation::Sum => phi.sum_axis(Axis(0)),
        Aggregation::Mean if phi.nrows() == 0 => Array1::zeros(phi.ncols()),
        Aggregation::Mean => phi.mean_axis(Axis(0)).unwrap(),
    }
}

/// Per-concept importance for the class whose rows make up `u`.
pub fn concept_integrated_gradients(
    u: ArrayView2<f64>,
    basis: ArrayView2<f64>,
    head: &LinearHead,
    target_class: usize,
    opts: &CigOptions,
) -> Result<Array1<f64>> {
    let phi = row_attributions(u, basis, head, target_class, opts)?;
    Ok(aggregate(&phi, opts.aggregation))
}

/// Closed-form attribution of the target logit: `φ_j = mean_r r_j · (W·w_target)_j`.
/// The bias has no gradient and contributes nothing.
pub fn analytic_cig_linear(
    u: ArrayView2<f64>,
    basis: ArrayView2<f64>,
    head: &LinearHead,
    target_class: usize,
) -> Result<Array1<f64>> {
    check_inputs(u, basis, head, target_class)?;
    let k = basis.nrows();
    let w_t = head.weights.column(target_class);
    let mut out = Array1::zeros(k);
    if u.nrows() == 0 {
        return Ok(out);
    }
    for j in 0..k {
        let g = basis.row(j).dot(&w_t);
        out[j] = u.column(j).sum() / u.nrows() as f64 * g;
    }
    Ok(out)
}

/// Labels per-concept importances for a class.
pub fn importance_records(class_id: &str, importance: ArrayView1<f64>, steps: usize) -> Vec<ConceptImportance> {
    importance
        .iter()
        .enumerate()
        .map(|(j, &v)| ConceptImportance {
            class_id: class_id.to_string(),
            concept_index: j,
            importance: v,
            steps,
        })
        .collect()
}

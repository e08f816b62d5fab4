//! Correlation metrics and concept similarity scores.

mod correlation;
mod score;

pub use correlation::{
    average_ranks, correlate, correlation_matrix, pearson, spearman, Correlation, CorrelationKind,
    CorrelationMatrix,
};
pub use score::{score_concepts, ConceptScores, EvalSplit, SimilarityRecord, TargetPredictions};

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Which model's concepts the maxima are taken for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McsAxis {
    /// One value per concept of model 1 (row-wise maxima).
    Rows,
    /// One value per concept of model 2 (column-wise maxima).
    Columns,
}

/// Maximum concept similarity: the best match each concept finds in the other model.
pub fn mcs(r: ArrayView2<f64>, axis: McsAxis) -> Array1<f64> {
    let reduce_over = match axis {
        McsAxis::Rows => Axis(1),
        McsAxis::Columns => Axis(0),
    };
    r.map_axis(reduce_over, |lane| {
        lane.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Mean maximum concept similarity over classes, per direction and combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mmcs {
    pub model1: f64,
    pub model2: f64,
    pub value: f64,
}

/// Averages the per-concept maxima over all concepts of all classes, for each
/// model, and then averages the two directions.
pub fn mmcs<'a, I>(matrices: I) -> Result<Mmcs>
where
    I: IntoIterator<Item = ArrayView2<'a, f64>>,
{
    let (mut s1, mut n1, mut s2, mut n2) = (0.0, 0usize, 0.0, 0usize);
    let mut classes = 0;
    for r in matrices {
        if r.is_empty() {
            return Err(Error::InvalidArgument("empty correlation matrix".into()));
        }
        classes += 1;
        s1 += mcs(r, McsAxis::Rows).sum();
        n1 += r.nrows();
        s2 += mcs(r, McsAxis::Columns).sum();
        n2 += r.ncols();
    }
    if classes == 0 {
        return Err(Error::InvalidArgument("MMCS needs at least one class".into()));
    }
    let (model1, model2) = (s1 / n1 as f64, s2 / n2 as f64);
    Ok(Mmcs {
        model1,
        model2,
        value: 0.5 * (model1 + model2),
    })
}

/// Concept coefficients keyed by `(layer, class)`; for a given class the
/// rows of both models refer to the same shared patches.
pub type CoefficientSet = BTreeMap<(String, String), Array2<f64>>;

/// MMCS for every pair of layers, labelled for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerwiseMatrix {
    pub layers1: Vec<String>,
    pub layers2: Vec<String>,
    /// `|layers1| × |layers2|`
    pub values: Array2<f64>,
}

impl LayerwiseMatrix {
    /// CSV with the second model's layers as the header and the first
    /// model's layer label leading each row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for l in &self.layers2 {
            out.push(',');
            out.push_str(&csv_field(l));
        }
        out.push('\n');
        for (i, l) in self.layers1.iter().enumerate() {
            out.push_str(&csv_field(l));
            for v in self.values.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn lookup<'a>(set: &'a CoefficientSet, model: u8, layer: &str, class: &str) -> Result<&'a Array2<f64>> {
    set.get(&(layer.to_string(), class.to_string())).ok_or_else(|| {
        Error::MissingMember(format!(
            "model {model} has no decomposition for layer {layer}, class {class}"
        ))
    })
}

pub fn layerwise_mmcs(
    coeffs1: &CoefficientSet,
    coeffs2: &CoefficientSet,
    layers1: &[String],
    layers2: &[String],
    classes: &[String],
    kind: CorrelationKind,
) -> Result<LayerwiseMatrix> {
    if classes.is_empty() {
        return Err(Error::InvalidArgument("no classes to compare".into()));
    }
    let mut values = Array2::zeros((layers1.len(), layers2.len()));
    for (i, l1) in layers1.iter().enumerate() {
        for (j, l2) in layers2.iter().enumerate() {
            let mut rs = Vec::with_capacity(classes.len());
            for c in classes {
                let u1 = lookup(coeffs1, 1, l1, c)?;
                let u2 = lookup(coeffs2, 2, l2, c)?;
                rs.push(correlation_matrix(u1.view(), u2.view(), kind)?.r);
            }
            values[[i, j]] = mmcs(rs.iter().map(|r| r.view()))?.value;
        }
    }
    Ok(LayerwiseMatrix {
        layers1: layers1.to_vec(),
        layers2: layers2.to_vec(),
        values,
    })
}

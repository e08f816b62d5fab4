//! Mean-max concept similarity between every pair of selected layers.

use std::path::PathBuf;

use conceptsim::factorize::nnls_refit;
use conceptsim::similarity::{layerwise_mmcs, CoefficientSet, CorrelationKind, LayerwiseMatrix};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{load_decomposition, run_ordered, SharedRows, Workspace};
use crate::error::Result;
use crate::store::{read_json, write_bytes, write_json, ContentHash};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerwiseOutput {
    pub matrix: LayerwiseMatrix,
    pub csv: PathBuf,
    /// True when the matrix was reused from an earlier run.
    pub cached: bool,
}

/// `layerwise/mmcs.json`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stored {
    input_hash: String,
    correlation: CorrelationKind,
    classes: Vec<String>,
    layers1: Vec<String>,
    layers2: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl Stored {
    fn matrix(&self) -> LayerwiseMatrix {
        let (r, c) = (self.layers1.len(), self.layers2.len());
        LayerwiseMatrix {
            layers1: self.layers1.clone(),
            layers2: self.layers2.clone(),
            values: Array2::from_shape_fn((r, c), |(i, j)| self.values[i][j]),
        }
    }
}

/// Computes the MMCS matrix between the selected layers of both models,
/// averaging over the selected classes, and writes `layerwise/mmcs.csv`.
pub fn layerwise(ws: &Workspace) -> Result<LayerwiseOutput> {
    let classes = ws.classes()?;
    let (layers1, layers2) = (ws.layers(1)?, ws.layers(2)?);
    let kind = ws.config.layerwise_correlation;
    let shared: Vec<SharedRows> = classes.iter().map(|c| ws.shared_rows(c)).collect::<Result<_>>()?;

    let mut items = Vec::new();
    for (model, layers) in [(1u8, &layers1), (2, &layers2)] {
        for layer in layers {
            for ci in 0..classes.len() {
                items.push((model, layer.clone(), ci));
            }
        }
    }
    let bases = run_ordered(ws.config.jobs, &items, |(m, l, ci)| {
        let (_, w, meta) = load_decomposition("layerwise", ws, *m, l, &classes[*ci])?;
        Ok((w, meta.input_hash))
    })?;

    let mut hash = ContentHash::new("layerwise/v1");
    hash.json(&kind).json(&classes).json(&layers1).json(&layers2);
    for s in &shared {
        hash.json(&s.manifest);
    }
    for (_, input_hash) in &bases {
        hash.bytes(input_hash.as_bytes());
    }
    let input_hash = hash.finish();

    let dir = ws.layout.layerwise_dir();
    let (json, csv) = (dir.join("mmcs.json"), dir.join("mmcs.csv"));
    if let Ok(stored) = read_json::<Stored>(&json) {
        if stored.input_hash == input_hash && csv.exists() {
            return Ok(LayerwiseOutput {
                matrix: stored.matrix(),
                csv,
                cached: true,
            });
        }
    }

    // Coefficients of every layer over the same shared rows of each class.
    let work: Vec<usize> = (0..items.len()).collect();
    let refits = run_ordered(ws.config.jobs, &work, |&i| {
        let (model, layer, ci) = &items[i];
        let rows = if *model == 1 { &shared[*ci].rows1 } else { &shared[*ci].rows2 };
        let a = ws.matrix(*model, layer, &classes[*ci])?.data.select(Axis(0), rows);
        Ok(nnls_refit(a.view(), bases[i].0.view())?)
    })?;
    let (mut coeffs1, mut coeffs2) = (CoefficientSet::new(), CoefficientSet::new());
    for ((model, layer, ci), u) in items.iter().zip(refits) {
        let set = if *model == 1 { &mut coeffs1 } else { &mut coeffs2 };
        set.insert((layer.clone(), classes[*ci].clone()), u);
    }
    let matrix = layerwise_mmcs(&coeffs1, &coeffs2, &layers1, &layers2, &classes, kind)?;
    write_bytes(&csv, matrix.to_csv().as_bytes())?;
    write_json(
        &json,
        &Stored {
            input_hash,
            correlation: kind,
            classes,
            layers1,
            layers2,
            values: matrix.values.rows().into_iter().map(|r| r.to_vec()).collect(),
        },
    )?;
    Ok(LayerwiseOutput {
        matrix,
        csv,
        cached: false,
    })
}

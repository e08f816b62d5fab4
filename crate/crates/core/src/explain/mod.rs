//! Patch selections that explain concept dissimilarity, and the report and
//! collage files built from them.

mod collage;
mod report;

pub use collage::{emit_collage_bundle, CollageBundle, CollageOptions, DEFAULT_COLLAGE_PATCHES};
pub use report::{
    emit_report, escape_component, report_file_name, validate_index, validate_report, ConceptReport, IndexEntry,
    ReportIndex, ScatterRegions, REPORT_SCHEMA_VERSION,
};

use std::collections::{BTreeMap, BTreeSet};

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::actio::{PatchManifest, Rect};
use crate::error::{Error, Result};
use crate::regress::Direction;

/// Patches listed per selection in reports.
pub const DEFAULT_TOP_N: usize = 10;
/// Top real selections whose images are withheld from the residual lists.
pub const DEFAULT_EXCLUDE_TOP: usize = 10;

/// One selected patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRef {
    /// Row in the manifest the selection was made over.
    pub row: usize,
    pub image_id: String,
    pub rect: Rect,
    /// The value the patch was ranked by.
    pub score: f64,
}

/// True against predicted coefficients of one concept, row by row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scatter {
    pub truth: Vec<f64>,
    pub predicted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptExplanation {
    pub class_id: String,
    pub concept_index: usize,
    /// Cross direction whose predictions are explained.
    pub direction: Direction,
    pub top_real: Vec<PatchRef>,
    pub over_predicted: Vec<PatchRef>,
    pub under_predicted: Vec<PatchRef>,
    /// Images withheld from the residual lists.
    pub excluded_images: Vec<String>,
    /// Prediction equals truth everywhere, so residual lists follow the tie rule only.
    pub zero_residual: bool,
    pub scatter: Scatter,
}

fn check_len(len: usize, manifest: &PatchManifest, what: &str) -> Result<()> {
    if len != manifest.entries.len() {
        return Err(Error::Dimension(format!(
            "{what} has {len} values, manifest has {} entries",
            manifest.entries.len()
        )));
    }
    Ok(())
}

/// Ranks the rows in `candidates` by `score`, keeping each image's
/// highest-scoring patch (earliest row on ties), and returns the first `n`
/// in descending score order with ties broken by row.
fn rank_one_per_image(
    score: &[f64],
    manifest: &PatchManifest,
    candidates: impl Iterator<Item = usize>,
    n: usize,
) -> Vec<PatchRef> {
    let mut best: BTreeMap<&str, usize> = BTreeMap::new();
    for row in candidates {
        let image = manifest.entries[row].image_id.as_str();
        match best.get(image) {
            Some(&cur) if score[row] <= score[cur] => {}
            _ => {
                best.insert(image, row);
            }
        }
    }
    let mut rows: Vec<usize> = best.into_values().collect();
    rows.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    rows.truncate(n);
    rows.into_iter()
        .map(|row| {
            let e = &manifest.entries[row];
            PatchRef {
                row,
                image_id: e.image_id.clone(),
                rect: e.rect,
                score: score[row],
            }
        })
        .collect()
}

/// The `n` highest-coefficient patches, one per image.
pub fn top_k_patches(u: ArrayView1<f64>, manifest: &PatchManifest, n: usize) -> Result<Vec<PatchRef>> {
    check_len(u.len(), manifest, "coefficient vector")?;
    let score = u.to_vec();
    Ok(rank_one_per_image(&score, manifest, 0..score.len(), n))
}

/// Over- and under-predicted patches after withholding the images of the
/// top `exclude_top` real selections.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSelection {
    pub over: Vec<PatchRef>,
    pub under: Vec<PatchRef>,
    pub excluded_images: Vec<String>,
    pub zero_residual: bool,
}

pub fn over_under_predicted(
    u_true: ArrayView1<f64>,
    u_pred: ArrayView1<f64>,
    manifest: &PatchManifest,
    n: usize,
    exclude_top: usize,
) -> Result<ResidualSelection> {
    check_len(u_true.len(), manifest, "true coefficients")?;
    check_len(u_pred.len(), manifest, "predicted coefficients")?;
    let excluded: BTreeSet<String> = top_k_patches(u_true, manifest, exclude_top)?
        .into_iter()
        .map(|p| p.image_id)
        .collect();
    let keep = || (0..manifest.entries.len()).filter(|&r| !excluded.contains(&manifest.entries[r].image_id));
    let residual: Vec<f64> = u_pred.iter().zip(u_true.iter()).map(|(p, t)| p - t).collect();
    let negated: Vec<f64> = residual.iter().map(|r| -r).collect();
    let mut over = rank_one_per_image(&residual, manifest, keep(), n);
    let mut under = rank_one_per_image(&negated, manifest, keep(), n);
    // report the signed residual for both lists
    for p in under.iter_mut() {
        p.score = residual[p.row];
    }
    for p in over.iter_mut() {
        p.score = residual[p.row];
    }
    Ok(ResidualSelection {
        over,
        under,
        excluded_images: excluded.into_iter().collect(),
        zero_residual: residual.iter().all(|&r| r == 0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainOptions {
    pub top_n: usize,
    pub exclude_top: usize,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            top_n: DEFAULT_TOP_N,
            exclude_top: DEFAULT_EXCLUDE_TOP,
        }
    }
}

/// Builds the full explanation of one concept over `manifest`'s rows.
pub fn explain_concept(
    class_id: &str,
    concept_index: usize,
    direction: Direction,
    u_true: ArrayView1<f64>,
    u_pred: ArrayView1<f64>,
    manifest: &PatchManifest,
    opts: &ExplainOptions,
) -> Result<ConceptExplanation> {
    let top_real = top_k_patches(u_true, manifest, opts.top_n)?;
    let sel = over_under_predicted(u_true, u_pred, manifest, opts.top_n, opts.exclude_top)?;
    Ok(ConceptExplanation {
        class_id: class_id.to_string(),
        concept_index,
        direction,
        top_real,
        over_predicted: sel.over,
        under_predicted: sel.under,
        excluded_images: sel.excluded_images,
        zero_residual: sel.zero_residual,
        scatter: Scatter {
            truth: u_true.to_vec(),
            predicted: u_pred.to_vec(),
        },
    })
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned crop in source-image pixel coordinates.
///
/// Serialized as `[x, y, w, h]`. Ordering is row-major (`y`, then `x`), which
/// matches the order produced by [`patch_grid`](super::patch_grid).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }
}

impl From<[u32; 4]> for Rect {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        Rect { x, y, w, h }
    }
}

impl From<Rect> for [u32; 4] {
    fn from(r: Rect) -> Self {
        [r.x, r.y, r.w, r.h]
    }
}

impl Ord for Rect {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.y, self.x, self.h, self.w).cmp(&(other.y, other.x, other.h, other.w))
    }
}

impl PartialOrd for Rect {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// One row of an activation matrix: which patch of which image it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchEntry {
    pub image_id: String,
    pub rect: Rect,
    /// Group the row belongs to; rows of `<layer>/<class_id>.npy` are the
    /// entries with this class id, in manifest order.
    pub class_id: String,
    /// The model's prediction for the source image. Empty when unavailable.
    pub predicted_class: String,
}

impl PatchEntry {
    pub fn key(&self) -> (&str, Rect) {
        (&self.image_id, self.rect)
    }
}

/// Ordered patch list shared by every activation matrix of a bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchManifest {
    pub image_size: u32,
    pub patch_size: u32,
    pub model_id: String,
    /// Labels of the linear head's output columns, if the bundle has a head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_classes: Option<Vec<String>>,
    pub entries: Vec<PatchEntry>,
}

/// Row selection for one class's concept proposals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalRows {
    /// Indices into the class matrix (not into the full manifest).
    pub rows: Vec<usize>,
    /// True when the selection used model predictions; false when predictions
    /// were missing and every row labelled with the class was used instead.
    pub used_predictions: bool,
}

impl PatchManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: PatchManifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size > self.image_size {
            return Err(Error::Manifest(format!(
                "patch_size {} must be in 1..={}",
                self.patch_size, self.image_size
            )));
        }
        for (i, e) in self.entries.iter().enumerate() {
            let r = e.rect;
            if r.w != self.patch_size || r.h != self.patch_size {
                return Err(Error::Manifest(format!(
                    "entry {i}: rect {}x{} differs from patch_size {}",
                    r.w, r.h, self.patch_size
                )));
            }
            if r.x + r.w > self.image_size || r.y + r.h > self.image_size {
                return Err(Error::Manifest(format!(
                    "entry {i}: rect {:?} exceeds image_size {}",
                    <[u32; 4]>::from(r),
                    self.image_size
                )));
            }
            if e.image_id.is_empty() || e.class_id.is_empty() {
                return Err(Error::Manifest(format!("entry {i}: empty image_id or class_id")));
            }
        }
        if let Some(labels) = &self.head_classes {
            if labels.len() < 2 {
                return Err(Error::Manifest("head_classes needs at least 2 labels".into()));
            }
        }
        Ok(())
    }

    /// Class ids in order of first appearance.
    pub fn classes(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for e in &self.entries {
            if !seen.contains(&e.class_id) {
                seen.push(e.class_id.clone());
            }
        }
        seen
    }

    /// Manifest indices of the rows labelled with `class_id`.
    pub fn class_indices(&self, class_id: &str) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.class_id == class_id)
            .map(|(i, _)| i)
            .collect()
    }

    /// The sub-manifest of rows labelled with `class_id`.
    pub fn for_class(&self, class_id: &str) -> PatchManifest {
        self.select(&self.class_indices(class_id))
    }

    pub fn select(&self, indices: &[usize]) -> PatchManifest {
        PatchManifest {
            image_size: self.image_size,
            patch_size: self.patch_size,
            model_id: self.model_id.clone(),
            head_classes: self.head_classes.clone(),
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    /// Concept-proposal rows of a class sub-manifest: the patches of images the
    /// model predicted as `class_id`. Falls back to all rows when any row of
    /// the class lacks a prediction.
    pub fn proposal_rows(&self, class_id: &str) -> ProposalRows {
        let class_rows: Vec<&PatchEntry> =
            self.entries.iter().filter(|e| e.class_id == class_id).collect();
        if class_rows.iter().any(|e| e.predicted_class.is_empty()) {
            return ProposalRows {
                rows: (0..class_rows.len()).collect(),
                used_predictions: false,
            };
        }
        ProposalRows {
            rows: class_rows
                .iter()
                .enumerate()
                .filter(|(_, e)| e.predicted_class == class_id)
                .map(|(i, _)| i)
                .collect(),
            used_predictions: true,
        }
    }

    /// Map from `(image_id, rect)` to manifest index.
    pub fn index_by_key(&self) -> BTreeMap<(String, Rect), usize> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.image_id.clone(), e.rect), i))
            .collect()
    }
}

/// Deduplicated union of two patch sets, keyed by `(image_id, rect)` and sorted
/// by image id, then rect.
///
/// When both manifests contain a key, the entry from `first` is kept.
pub fn union_image_sets(first: &PatchManifest, second: &PatchManifest) -> Result<PatchManifest> {
    if first.image_size != second.image_size || first.patch_size != second.patch_size {
        return Err(Error::Geometry(format!(
            "image/patch size {}/{} vs {}/{}",
            first.image_size, first.patch_size, second.image_size, second.patch_size
        )));
    }
    let mut merged: BTreeMap<(String, Rect), PatchEntry> = BTreeMap::new();
    for e in first.entries.iter().chain(&second.entries) {
        merged
            .entry((e.image_id.clone(), e.rect))
            .or_insert_with(|| e.clone());
    }
    let model_id = if first.model_id == second.model_id {
        first.model_id.clone()
    } else {
        let mut ids = [first.model_id.as_str(), second.model_id.as_str()];
        ids.sort();
        ids.join("+")
    };
    Ok(PatchManifest {
        image_size: first.image_size,
        patch_size: first.patch_size,
        model_id,
        head_classes: None,
        entries: merged.into_values().collect(),
    })
}

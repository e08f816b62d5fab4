use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Seek, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use super::manifest::PatchManifest;
use super::npy::{read_npy, read_npy_vector, write_npy};
use crate::error::{Error, Result};

pub const HEAD_WEIGHTS: &str = "head_weights.npy";
pub const HEAD_BIAS: &str = "head_bias.npy";

/// Activations of one layer for one class: `n` patches by `d` features.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub data: Array2<f64>,
    pub model_id: String,
    pub layer_id: String,
    pub class_id: String,
}

impl ActivationMatrix {
    pub fn new(
        data: Array2<f64>,
        model_id: impl Into<String>,
        layer_id: impl Into<String>,
        class_id: impl Into<String>,
    ) -> Result<Self> {
        let m = ActivationMatrix {
            data,
            model_id: model_id.into(),
            layer_id: layer_id.into(),
            class_id: class_id.into(),
        };
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} is empty ({:?})",
                m.label(),
                m.data.dim()
            )));
        }
        ensure_finite(&m.data, &m.label())?;
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn label(&self) -> String {
        format!("{}:{}/{}", self.model_id, self.layer_id, self.class_id)
    }
}

/// Final linear classifier: `logits = a · weights + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `d × C`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub class_labels: Vec<String>,
}

impl LinearHead {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, class_labels: Vec<String>) -> Result<Self> {
        let c = weights.ncols();
        if c < 2 {
            return Err(Error::InvalidArgument(format!(
                "head needs at least 2 classes, got {c}"
            )));
        }
        if bias.len() != c || class_labels.len() != c {
            return Err(Error::Dimension(format!(
                "head has {c} weight columns, {} biases and {} labels",
                bias.len(),
                class_labels.len()
            )));
        }
        ensure_finite(&weights, "head weights")?;
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head bias".into()));
        }
        Ok(LinearHead {
            weights,
            bias,
            class_labels,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_labels.iter().position(|l| l == label)
    }
}

/// Everything dumped for one model: per-(layer, class) activations, the patch
/// manifest, and optionally the classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: PatchManifest,
    /// Keyed by `(layer, class)`.
    pub matrices: BTreeMap<(String, String), ActivationMatrix>,
    pub head: Option<LinearHead>,
}

impl Bundle {
    pub fn layers(&self) -> Vec<String> {
        let mut layers: Vec<String> = self.matrices.keys().map(|(l, _)| l.clone()).collect();
        layers.dedup();
        layers
    }

    pub fn classes(&self) -> Vec<String> {
        self.manifest.classes()
    }

    pub fn matrix(&self, layer: &str, class: &str) -> Result<&ActivationMatrix> {
        self.matrices
            .get(&(layer.to_string(), class.to_string()))
            .ok_or_else(|| Error::MissingMember(member_name(layer, class)))
    }

    /// Checks that every class has a matrix for every layer and that row counts
    /// match the manifest.
    pub fn validate(&self) -> Result<()> {
        self.manifest.validate()?;
        for layer in self.layers() {
            for class in self.classes() {
                let m = self.matrix(&layer, &class)?;
                let expected = self.manifest.class_indices(&class).len();
                if m.rows() != expected {
                    return Err(Error::RowCountMismatch {
                        what: member_name(&layer, &class),
                        matrix: m.rows(),
                        manifest: expected,
                    });
                }
            }
        }
        let mut dims = BTreeMap::new();
        for ((layer, class), m) in &self.matrices {
            if self.manifest.class_indices(class).is_empty() {
                return Err(Error::Manifest(format!(
                    "archive has {} but the manifest has no rows for class {class:?}",
                    member_name(layer, class)
                )));
            }
            if *dims.entry(layer.clone()).or_insert(m.cols()) != m.cols() {
                return Err(Error::Dimension(format!(
                    "layer {layer:?} has inconsistent feature dimension across classes"
                )));
            }
        }
        Ok(())
    }
}

pub fn member_name(layer: &str, class: &str) -> String {
    format!("{layer}/{class}.npy")
}

fn ensure_finite(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Reads all `.npy` members of an NPZ archive.
pub fn read_npz_members<R: Read + Seek>(reader: R) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut archive = ZipArchive::new(reader)?;
    let mut members = BTreeMap::new();
    for i in 0..archive.len() {
        let mut file = archive.by_index(i)?;
        if file.is_dir() {
            continue;
        }
        let mut bytes = Vec::with_capacity(file.size() as usize);
        file.read_to_end(&mut bytes)?;
        members.insert(file.name().to_string(), bytes);
    }
    Ok(members)
}

/// Writes members to an uncompressed NPZ archive with fixed timestamps, so that
/// equal contents give byte-identical files.
pub fn write_npz_members<W: Write + Seek>(
    writer: W,
    members: &BTreeMap<String, Vec<u8>>,
) -> Result<()> {
    let options = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    let mut zip = ZipWriter::new(writer);
    for (name, bytes) in members {
        zip.start_file(name.as_str(), options)?;
        zip.write_all(bytes)?;
    }
    zip.finish()?;
    Ok(())
}

/// Writes named matrices as an NPZ archive.
pub fn save_npz(path: &Path, matrices: &BTreeMap<String, Array2<f64>>) -> Result<()> {
    let members = matrices
        .iter()
        .map(|(name, m)| (npy_name(name), write_npy(m)))
        .collect();
    write_atomic(path, |file| write_npz_members(file, &members))
}

/// Reads every member of an NPZ archive as a matrix, keyed without the `.npy` suffix.
pub fn load_npz(path: &Path) -> Result<BTreeMap<String, Array2<f64>>> {
    read_npz_members(File::open(path)?)?
        .into_iter()
        .filter_map(|(name, bytes)| {
            name.strip_suffix(".npy")
                .map(|stem| read_npy(&bytes).map(|m| (stem.to_string(), m)))
        })
        .collect()
}

fn npy_name(name: &str) -> String {
    if name.ends_with(".npy") {
        name.to_string()
    } else {
        format!("{name}.npy")
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut File) -> Result<()>,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    let mut file = File::create(&tmp)?;
    write(&mut file)?;
    file.sync_all()?;
    drop(file);
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads and validates an NPZ activation bundle and its JSON manifest.
pub fn load_bundle(npz_path: &Path, manifest_path: &Path) -> Result<Bundle> {
    let manifest = PatchManifest::from_json(&std::fs::read_to_string(manifest_path)?)?;
    let members = read_npz_members(File::open(npz_path)?)?;
    bundle_from_members(manifest, members)
}

pub fn bundle_from_members(
    manifest: PatchManifest,
    mut members: BTreeMap<String, Vec<u8>>,
) -> Result<Bundle> {
    let head = match (members.remove(HEAD_WEIGHTS), members.remove(HEAD_BIAS)) {
        (None, None) => None,
        (Some(w), Some(b)) => {
            let weights = read_npy(&w)?;
            let bias = read_npy_vector(&b)?;
            let labels = manifest
                .head_classes
                .clone()
                .unwrap_or_else(|| (0..weights.ncols()).map(|i| i.to_string()).collect());
            Some(LinearHead::new(weights, bias, labels)?)
        }
        (Some(_), None) => return Err(Error::MissingMember(HEAD_BIAS.into())),
        (None, Some(_)) => return Err(Error::MissingMember(HEAD_WEIGHTS.into())),
    };

    let mut matrices = BTreeMap::new();
    for (name, bytes) in members {
        let Some(stem) = name.strip_suffix(".npy") else {
            continue;
        };
        let Some((layer, class)) = stem.rsplit_once('/') else {
            return Err(Error::Manifest(format!(
                "archive member {name:?} is not named <layer>/<class>.npy"
            )));
        };
        let data = read_npy(&bytes)?;
        let m = ActivationMatrix::new(data, manifest.model_id.clone(), layer, class)?;
        matrices.insert((layer.to_string(), class.to_string()), m);
    }
    if matrices.is_empty() {
        return Err(Error::MissingMember("<layer>/<class>.npy".into()));
    }
    let bundle = Bundle {
        manifest,
        matrices,
        head,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes a bundle as NPZ plus manifest JSON.
pub fn save_bundle(bundle: &Bundle, npz_path: &Path, manifest_path: &Path) -> Result<()> {
    bundle.validate()?;
    let mut members = BTreeMap::new();
    for ((layer, class), m) in &bundle.matrices {
        members.insert(member_name(layer, class), write_npy(&m.data));
    }
    if let Some(head) = &bundle.head {
        members.insert(HEAD_WEIGHTS.to_string(), write_npy(&head.weights));
        let bias = head.bias.clone().insert_axis(Axis(0));
        members.insert(HEAD_BIAS.to_string(), write_npy(&bias));
    }
    write_atomic(npz_path, |f| write_npz_members(f, &members))?;
    let mut manifest = bundle.manifest.clone();
    if let Some(head) = &bundle.head {
        manifest.head_classes = Some(head.class_labels.clone());
    }
    let text = manifest.to_json();
    write_atomic(manifest_path, |f| Ok(f.write_all(text.as_bytes())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actio::{PatchEntry, Rect};
    use ndarray::Array;

    fn manifest(rows: usize) -> PatchManifest {
        PatchManifest {
            image_size: 8,
            patch_size: 4,
            model_id: "m".into(),
            head_classes: None,
            entries: (0..rows)
                .map(|i| PatchEntry {
                    image_id: format!("img{}", i / 4),
                    rect: Rect::new(4 * (i as u32 % 2), 4 * (i as u32 / 2 % 2), 4, 4),
                    class_id: "c".into(),
                    predicted_class: "c".into(),
                })
                .collect(),
        }
    }

    fn members(rows: usize) -> BTreeMap<String, Vec<u8>> {
        let data = Array::from_shape_fn((rows, 3), |(i, j)| (i * 3 + j) as f64);
        BTreeMap::from([("layer/c.npy".to_string(), write_npy(&data))])
    }

    #[test]
    fn loads_single_layer_bundle() {
        let b = bundle_from_members(manifest(16), members(16)).unwrap();
        assert_eq!(b.layers(), vec!["layer".to_string()]);
        assert_eq!(b.matrix("layer", "c").unwrap().rows(), 16);
        assert!(b.head.is_none());
    }

    #[test]
    fn rejects_row_count_mismatch() {
        let err = bundle_from_members(manifest(15), members(16)).unwrap_err();
        assert!(matches!(err, Error::RowCountMismatch { matrix: 16, manifest: 15, .. }));
    }

    #[test]
    fn head_requires_both_members() {
        let mut m = members(4);
        m.insert(HEAD_WEIGHTS.into(), write_npy(&Array2::zeros((3, 2))));
        let err = bundle_from_members(manifest(4), m).unwrap_err();
        assert!(matches!(err, Error::MissingMember(_)));
    }

    #[test]
    fn round_trips_through_files() {
        let mut m = members(4);
        m.insert(HEAD_WEIGHTS.into(), write_npy(&Array2::ones((3, 2))));
        m.insert(HEAD_BIAS.into(), write_npy(&Array2::zeros((1, 2))));
        let bundle = bundle_from_members(manifest(4), m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (npz, json) = (dir.path().join("b.npz"), dir.path().join("b.json"));
        save_bundle(&bundle, &npz, &json).unwrap();
        let mut back = load_bundle(&npz, &json).unwrap();
        assert_eq!(back.matrices, bundle.matrices);
        assert_eq!(back.head.as_ref().unwrap().class_labels, vec!["0", "1"]);
        back.manifest.head_classes = None;
        assert_eq!(back.manifest, bundle.manifest);

        let first = std::fs::read(&npz).unwrap();
        save_bundle(&bundle, &npz, &json).unwrap();
        assert_eq!(first, std::fs::read(&npz).unwrap());
    }
}

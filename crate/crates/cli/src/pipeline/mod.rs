//! Pipeline stages. Each stage reads its inputs (bundles or upstream stage
//! outputs) and writes its own directory under the output root:
//!
//! ```text
//! synth/      model{1,2}.npz, model{1,2}.json, truth.json
//! extract/    model{m}/<layer>/<class>.npz (U, W) + .json sidecar
//! compare/    similarity.jsonl, replacement.jsonl, importance.jsonl,
//!             feature_importance.jsonl, summary.csv, run.json,
//!             classes/<class>/{result.json, rows.json, coefficients.npz,
//!                              regressors.npz, regressors.json}
//! layerwise/  mmcs.csv, mmcs.json
//! report/     index.json, ranking.csv, concepts/*.json, collages/
//! ```
//!
//! Stages never write outside their own directory, so deleting a downstream
//! directory leaves upstream results untouched.

mod compare;
mod extract;
mod layerwise;
mod report;
mod synth;

pub use compare::{compare, ClassResult, ClassRows, CompareRun, FeatureImportance, ModelImportance};
pub use extract::{extract, load_decomposition, DecompositionMeta, ExtractedItem};
pub use layerwise::{layerwise, LayerwiseOutput};
pub use report::{percentile_selection, report, ReportOutput};
pub use synth::{synth, SynthOutput, SynthTruth};

use std::path::{Path, PathBuf};

use conceptsim::actio::{load_bundle, union_image_sets, ActivationMatrix, Bundle, PatchManifest};
use conceptsim::explain::escape_component;
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

/// Paths of every stage artifact under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn extract_dir(&self) -> PathBuf {
        self.root.join("extract")
    }

    /// `(U/W archive, sidecar)` of one decomposition.
    pub fn decomposition(&self, model: u8, layer: &str, class: &str) -> (PathBuf, PathBuf) {
        let dir = self
            .extract_dir()
            .join(format!("model{model}"))
            .join(escape_component(layer));
        let stem = escape_component(class);
        (dir.join(format!("{stem}.npz")), dir.join(format!("{stem}.json")))
    }

    pub fn compare_dir(&self) -> PathBuf {
        self.root.join("compare")
    }

    pub fn compare_class_dir(&self, class: &str) -> PathBuf {
        self.compare_dir().join("classes").join(escape_component(class))
    }

    pub fn layerwise_dir(&self) -> PathBuf {
        self.root.join("layerwise")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Patches scored for one class: the union of both models' concept
/// proposals, with the matching rows of each model's class matrix.
#[derive(Debug, Clone)]
pub struct SharedRows {
    pub manifest: PatchManifest,
    pub rows1: Vec<usize>,
    pub rows2: Vec<usize>,
}

/// Loaded bundles plus the configuration that selects from them.
#[derive(Debug)]
pub struct Workspace {
    pub config: PipelineConfig,
    pub layout: Layout,
    bundles: [Bundle; 2],
}

impl Workspace {
    /// Loads both bundles for `stage` (named in dependency errors).
    pub fn open(config: &PipelineConfig, stage: &'static str) -> Result<Self> {
        let load = |model: u8| -> Result<Bundle> {
            let paths = config.model_paths(model);
            let synthetic = if model == 1 { &config.model1 } else { &config.model2 }.is_none();
            for p in [&paths.bundle, &paths.manifest] {
                if !p.exists() {
                    return Err(if synthetic {
                        CliError::StageDependency {
                            stage,
                            needs: "synth",
                            missing: p.display().to_string(),
                        }
                    } else {
                        CliError::File {
                            path: p.clone(),
                            source: std::io::Error::new(std::io::ErrorKind::NotFound, "bundle file not found"),
                        }
                    });
                }
            }
            Ok(load_bundle(&paths.bundle, &paths.manifest)?)
        };
        let bundles = [load(1)?, load(2)?];
        Ok(Workspace {
            config: config.clone(),
            layout: Layout::new(&config.out),
            bundles,
        })
    }

    pub fn bundle(&self, model: u8) -> &Bundle {
        &self.bundles[usize::from(model == 2)]
    }

    /// Selected layers of a model, checked against the bundle.
    pub fn layers(&self, model: u8) -> Result<Vec<String>> {
        let available = self.bundle(model).layers();
        let chosen = if model == 1 {
            &self.config.layers1
        } else {
            &self.config.layers2
        };
        if chosen.is_empty() {
            return Ok(available);
        }
        for l in chosen {
            if !available.contains(l) {
                return Err(CliError::Config(format!(
                    "model {model} has no layer {l:?} (available: {})",
                    available.join(", ")
                )));
            }
        }
        Ok(chosen.clone())
    }

    /// Layer used for regression, replacement, and attribution.
    pub fn compare_layer(&self, model: u8) -> Result<String> {
        let chosen = if model == 1 {
            &self.config.compare_layer1
        } else {
            &self.config.compare_layer2
        };
        let layers = self.layers(model)?;
        match chosen {
            Some(l) if self.bundle(model).layers().contains(l) => Ok(l.clone()),
            Some(l) => Err(CliError::Config(format!("model {model} has no layer {l:?}"))),
            None => Ok(layers.last().cloned().expect("bundles have at least one layer")),
        }
    }

    /// Selected classes, in configuration order or model 1's manifest order.
    pub fn classes(&self) -> Result<Vec<String>> {
        let (c1, c2) = (self.bundle(1).classes(), self.bundle(2).classes());
        if self.config.classes.is_empty() {
            let shared: Vec<String> = c1.into_iter().filter(|c| c2.contains(c)).collect();
            if shared.is_empty() {
                return Err(CliError::Config("the bundles share no class".into()));
            }
            return Ok(shared);
        }
        for c in &self.config.classes {
            if !c1.contains(c) || !c2.contains(c) {
                return Err(CliError::Config(format!("class {c:?} is missing from one of the bundles")));
            }
        }
        Ok(self.config.classes.clone())
    }

    pub fn matrix(&self, model: u8, layer: &str, class: &str) -> Result<&ActivationMatrix> {
        Ok(self.bundle(model).matrix(layer, class)?)
    }

    /// Manifest of a model's concept proposals for `class`, and whether
    /// model predictions selected them.
    pub fn proposals(&self, model: u8, class: &str) -> (PatchManifest, Vec<usize>, bool) {
        let manifest = &self.bundle(model).manifest;
        let class_manifest = manifest.for_class(class);
        let proposals = manifest.proposal_rows(class);
        (class_manifest.select(&proposals.rows), proposals.rows, proposals.used_predictions)
    }

    pub fn shared_rows(&self, class: &str) -> Result<SharedRows> {
        let (p1, _, _) = self.proposals(1, class);
        let (p2, _, _) = self.proposals(2, class);
        let manifest = union_image_sets(&p1, &p2)?;
        let rows_of = |model: u8| -> Result<Vec<usize>> {
            let index = self.bundle(model).manifest.for_class(class).index_by_key();
            manifest
                .entries
                .iter()
                .map(|e| {
                    index.get(&(e.image_id.clone(), e.rect)).copied().ok_or_else(|| {
                        CliError::Core(conceptsim::Error::Manifest(format!(
                            "patch {} {:?} of class {class} is missing from model {model}",
                            e.image_id,
                            <[u32; 4]>::from(e.rect)
                        )))
                    })
                })
                .collect()
        };
        Ok(SharedRows {
            rows1: rows_of(1)?,
            rows2: rows_of(2)?,
            manifest,
        })
    }
}

/// Maps `f` over `items` on a pool of `jobs` threads (0 = all cores) and
/// returns the results in item order. The first failing item, in item
/// order, determines the error.
pub fn run_ordered<I, T, F>(jobs: usize, items: &[I], f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    let results: Vec<Result<T>> = pool.install(|| items.par_iter().map(&f).collect());
    results.into_iter().collect()
}

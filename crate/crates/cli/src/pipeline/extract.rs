//! Concept extraction: one factorization per (model, layer, class), cached
//! by the content hash of its input matrix and solver settings.

use std::collections::BTreeMap;

use conceptsim::actio::{load_npz, save_npz};
use conceptsim::factorize::{factorize, Method};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{run_ordered, Workspace};
use crate::error::{CliError, Result};
use crate::store::{read_json, write_json, ContentHash};

/// Sidecar of a cached decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionMeta {
    pub model: u8,
    pub model_id: String,
    pub layer: String,
    pub class_id: String,
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Proposal rows factorized.
    pub rows: usize,
    pub cols: usize,
    /// False when the manifest lacked predictions and every class row was used.
    pub used_predictions: bool,
    pub recon_error: f64,
    pub relative_error: f64,
    pub iterations: usize,
    pub input_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedItem {
    pub meta: DecompositionMeta,
    /// True when the decomposition was reused from an earlier run.
    pub cached: bool,
}

#[derive(Serialize)]
struct SolverKey {
    method: Method,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
}

struct Input {
    a: Array2<f64>,
    method: Method,
    used_predictions: bool,
    hash: String,
}

fn input(ws: &Workspace, model: u8, layer: &str, class: &str) -> Result<Input> {
    let cfg = &ws.config;
    let (_, rows, used_predictions) = ws.proposals(model, class);
    if rows.is_empty() {
        return Err(CliError::Config(format!(
            "model {model} predicts no image as class {class:?}; nothing to decompose"
        )));
    }
    let a = ws.matrix(model, layer, class)?.data.select(Axis(0), &rows);
    let method = cfg.method.resolve(a.view());
    let mut hash = ContentHash::new("extract/v1");
    hash.matrix(&a).json(&SolverKey {
        method,
        k: cfg.k,
        seed: cfg.seed,
        max_iter: cfg.max_iter,
        tol: cfg.tol,
    });
    Ok(Input {
        a,
        method,
        used_predictions,
        hash: hash.finish(),
    })
}

fn cached_meta(ws: &Workspace, model: u8, layer: &str, class: &str, hash: &str) -> Option<DecompositionMeta> {
    let (npz, json) = ws.layout.decomposition(model, layer, class);
    let meta: DecompositionMeta = read_json(&json).ok()?;
    (meta.input_hash == hash && npz.exists()).then_some(meta)
}

fn extract_one(ws: &Workspace, model: u8, layer: &str, class: &str) -> Result<ExtractedItem> {
    let cfg = &ws.config;
    let inp = input(ws, model, layer, class)?;
    if let Some(meta) = cached_meta(ws, model, layer, class, &inp.hash) {
        return Ok(ExtractedItem { meta, cached: true });
    }
    let dec = factorize(inp.a.view(), cfg.k, inp.method, &cfg.factorize_options())?;
    let meta = DecompositionMeta {
        model,
        model_id: ws.bundle(model).manifest.model_id.clone(),
        layer: layer.to_string(),
        class_id: class.to_string(),
        method: dec.method,
        k: dec.k,
        seed: cfg.seed,
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        rows: inp.a.nrows(),
        cols: inp.a.ncols(),
        used_predictions: inp.used_predictions,
        recon_error: dec.recon_error,
        relative_error: dec.relative_error(inp.a.view()),
        iterations: dec.iterations,
        input_hash: inp.hash,
    };
    let (npz, json) = ws.layout.decomposition(model, layer, class);
    save_npz(&npz, &BTreeMap::from([("U".to_string(), dec.u), ("W".to_string(), dec.w)]))?;
    // The sidecar is written last: its presence marks a complete entry.
    write_json(&json, &meta)?;
    Ok(ExtractedItem { meta, cached: false })
}

/// Layers decomposed for a model: the selected layers plus the compare layer.
pub(super) fn extract_layers(ws: &Workspace, model: u8) -> Result<Vec<String>> {
    let mut layers = ws.layers(model)?;
    let compare = ws.compare_layer(model)?;
    if !layers.contains(&compare) {
        layers.push(compare);
    }
    Ok(layers)
}

/// Decomposes every selected (model, layer, class), reusing cached results
/// whose inputs are unchanged. Writes `extract/summary.json`.
pub fn extract(ws: &Workspace) -> Result<Vec<ExtractedItem>> {
    let classes = ws.classes()?;
    let mut items = Vec::new();
    for model in [1u8, 2] {
        for layer in extract_layers(ws, model)? {
            for class in &classes {
                items.push((model, layer.clone(), class.clone()));
            }
        }
    }
    let done = run_ordered(ws.config.jobs, &items, |(m, l, c)| extract_one(ws, *m, l, c))?;
    let metas: Vec<&DecompositionMeta> = done.iter().map(|d| &d.meta).collect();
    write_json(&ws.layout.extract_dir().join("summary.json"), &metas)?;
    Ok(done)
}

/// Loads a cached decomposition `(U, W, meta)`, failing with a stage
/// dependency error when it is missing or was computed from other inputs.
pub fn load_decomposition(
    stage: &'static str,
    ws: &Workspace,
    model: u8,
    layer: &str,
    class: &str,
) -> Result<(Array2<f64>, Array2<f64>, DecompositionMeta)> {
    let inp = input(ws, model, layer, class)?;
    let (npz, _) = ws.layout.decomposition(model, layer, class);
    let missing = || CliError::StageDependency {
        stage,
        needs: "extract",
        missing: format!("an up-to-date decomposition of model {model}, layer {layer}, class {class}"),
    };
    let meta = cached_meta(ws, model, layer, class, &inp.hash).ok_or_else(missing)?;
    let mut m = load_npz(&npz)?;
    match (m.remove("U"), m.remove("W")) {
        (Some(u), Some(w)) if w.nrows() == meta.k && w.ncols() == meta.cols && u.nrows() == meta.rows => {
            Ok((u, w, meta))
        }
        _ => Err(missing()),
    }
}

//! Concept comparison per class: shared patches, NNLS refits, the four
//! direction regressions, similarity scores, the replacement test, and
//! concept attributions.

use std::collections::BTreeMap;

use conceptsim::actio::{load_npz, save_npz, PatchManifest};
use conceptsim::attribute::{concept_integrated_gradients, importance_records, CigOptions, ConceptImportance};
use conceptsim::factorize::nnls_refit;
use conceptsim::regress::{permutation_importance, ConceptRegressor, Direction};
use conceptsim::replace::{replacement_test, KlDirection, ReplacementInput, ReplacementOutcome};
use conceptsim::similarity::{score_concepts, ConceptScores, EvalSplit, SimilarityRecord};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{load_decomposition, run_ordered, Layout, Workspace};
use crate::error::{CliError, Result};
use crate::store::{csv_field, csv_number, read_json, write_bytes, write_json, write_jsonl, ContentHash};

/// Attribution of one concept of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelImportance {
    pub model: u8,
    #[serde(flatten)]
    pub importance: ConceptImportance,
}

/// Permutation importance of every source feature for one cross regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub class_id: String,
    pub direction: Direction,
    pub baseline_r2: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Everything `compare` derives for one class (`classes/<class>/result.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class_id: String,
    pub layer1: String,
    pub layer2: String,
    pub input_hash: String,
    pub shared_rows: usize,
    pub train_rows: usize,
    pub eval_rows: usize,
    /// Lasso problems that stopped at the iteration cap.
    pub unconverged: usize,
    pub records: Vec<SimilarityRecord>,
    pub outcomes: Vec<ReplacementOutcome>,
    pub importance: Vec<ModelImportance>,
    pub feature_importance: Vec<FeatureImportance>,
    /// Steps skipped and why.
    pub notes: Vec<String>,
}

/// Rows of the class result files: the shared patch list and the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRows {
    pub shared: PatchManifest,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// `compare/run.json`: which classes and layers the last run covered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRun {
    pub classes: Vec<String>,
    pub layer1: String,
    pub layer2: String,
    pub input_hashes: Vec<String>,
}

#[derive(Serialize)]
struct CompareKey {
    lambda: f64,
    folds: usize,
    eval_fraction: f64,
    lasso_max_iter: usize,
    lasso_tol: f64,
    importance_repeats: usize,
    cig: CigOptions,
    kl_direction: KlDirection,
    seed: u64,
}

/// Coefficient archive member names.
pub(super) fn coefficient_member(model: u8, what: &str) -> String {
    format!("u{model}_{what}")
}

fn regressor_member(d: Direction) -> String {
    let (s, t) = d.models();
    format!("weights_{s}to{t}")
}

#[derive(Serialize)]
struct RegressorMeta<'a> {
    direction: Direction,
    lambda: f64,
    folds: usize,
    unconverged: usize,
    x_mean: Vec<f64>,
    x_std: Vec<f64>,
    x_constant: &'a [bool],
    y_mean: Vec<f64>,
    y_std: Vec<f64>,
    y_constant: &'a [bool],
}

impl<'a> From<&'a ConceptRegressor> for RegressorMeta<'a> {
    fn from(r: &'a ConceptRegressor) -> Self {
        RegressorMeta {
            direction: r.direction,
            lambda: r.lambda,
            folds: r.folds,
            unconverged: r.unconverged,
            x_mean: r.x_mean.to_vec(),
            x_std: r.x_std.to_vec(),
            x_constant: &r.x_constant,
            y_mean: r.y_mean.to_vec(),
            y_std: r.y_std.to_vec(),
            y_constant: &r.y_constant,
        }
    }
}

struct ModelInputs {
    a: Array2<f64>,
    w: Array2<f64>,
}

fn replacement(
    ws: &Workspace,
    class: &str,
    model: u8,
    basis: ArrayView2<f64>,
    scores: &ConceptScores,
    notes: &mut Vec<String>,
) -> Result<Vec<ReplacementOutcome>> {
    let Some(head) = &ws.bundle(model).head else {
        notes.push(format!("model {model} has no head: replacement test skipped"));
        return Ok(Vec::new());
    };
    let direction = if model == 1 { Direction::TwoToOne } else { Direction::OneToTwo };
    let delta: Vec<f64> = scores
        .records
        .iter()
        .filter(|r| r.target_model() == model)
        .map(|r| r.delta_pearson)
        .collect();
    let p = scores.predictions(model);
    let input = ReplacementInput {
        class_id: class,
        direction,
        u_true: p.truth.view(),
        u_self_pred: p.self_pred.view(),
        u_cross_pred: p.cross_pred.view(),
        basis,
        head,
        delta_pearson: Some(&delta),
    };
    Ok(replacement_test(&input, &ws.config.replacement_options())?)
}

fn attribution(
    ws: &Workspace,
    class: &str,
    model: u8,
    u: ArrayView2<f64>,
    basis: ArrayView2<f64>,
    notes: &mut Vec<String>,
) -> Result<Vec<ModelImportance>> {
    let Some(head) = &ws.bundle(model).head else {
        notes.push(format!("model {model} has no head: attribution skipped"));
        return Ok(Vec::new());
    };
    let Some(target) = head.class_index(class) else {
        notes.push(format!("model {model}'s head has no output {class:?}: attribution skipped"));
        return Ok(Vec::new());
    };
    let opts = ws.config.cig_options();
    let phi = concept_integrated_gradients(u, basis, head, target, &opts)?;
    Ok(importance_records(class, phi.view(), opts.steps)
        .into_iter()
        .map(|importance| ModelImportance { model, importance })
        .collect())
}

fn check_head_width(ws: &Workspace, model: u8, layer: &str, width: usize) -> Result<()> {
    match &ws.bundle(model).head {
        Some(head) if head.input_dim() != width => Err(CliError::Config(format!(
            "model {model}'s head reads {} features but compare layer {layer:?} has {width}; \
             set compare_layer{model} to the layer feeding the head",
            head.input_dim()
        ))),
        _ => Ok(()),
    }
}

fn compare_class(ws: &Workspace, class: &str, layer1: &str, layer2: &str) -> Result<ClassResult> {
    let cfg = &ws.config;
    let shared = ws.shared_rows(class)?;
    let mut hash = ContentHash::new("compare/v1");
    let mut inputs = Vec::with_capacity(2);
    for (model, layer, rows) in [(1u8, layer1, &shared.rows1), (2, layer2, &shared.rows2)] {
        let (_, w, meta) = load_decomposition("compare", ws, model, layer, class)?;
        let a = ws.matrix(model, layer, class)?.data.select(Axis(0), rows);
        check_head_width(ws, model, layer, a.ncols())?;
        hash.bytes(meta.input_hash.as_bytes()).matrix(&a).matrix(&w);
        if let Some(head) = &ws.bundle(model).head {
            hash.matrix(&head.weights).json(&head.bias.to_vec()).json(&head.class_labels);
        }
        inputs.push(ModelInputs { a, w });
    }
    hash.json(&shared.manifest).json(&CompareKey {
        lambda: cfg.lambda,
        folds: cfg.folds,
        eval_fraction: cfg.eval_fraction,
        lasso_max_iter: cfg.lasso_max_iter,
        lasso_tol: cfg.lasso_tol,
        importance_repeats: cfg.importance_repeats,
        cig: cfg.cig_options(),
        kl_direction: cfg.kl_direction,
        seed: cfg.seed,
    });
    let input_hash = hash.finish();

    let dir = ws.layout.compare_class_dir(class);
    if let Ok(cached) = read_json::<ClassResult>(&dir.join("result.json")) {
        if cached.input_hash == input_hash && dir.join("coefficients.npz").exists() {
            return Ok(cached);
        }
    }

    let [m1, m2]: [ModelInputs; 2] = inputs.try_into().ok().expect("two models");
    let u1 = nnls_refit(m1.a.view(), m1.w.view())?;
    let u2 = nnls_refit(m2.a.view(), m2.w.view())?;
    let split = EvalSplit::by_image(&shared.manifest, cfg.eval_fraction, cfg.seed)?;
    let scores = score_concepts(
        class,
        m1.a.view(),
        m2.a.view(),
        u1.view(),
        u2.view(),
        &split,
        &cfg.regressor_options(),
    )?;

    let mut notes = Vec::new();
    let mut outcomes = replacement(ws, class, 1, m1.w.view(), &scores, &mut notes)?;
    outcomes.extend(replacement(ws, class, 2, m2.w.view(), &scores, &mut notes)?);
    let mut importance = attribution(ws, class, 1, u1.view(), m1.w.view(), &mut notes)?;
    importance.extend(attribution(ws, class, 2, u2.view(), m2.w.view(), &mut notes)?);

    let mut records = scores.records.clone();
    for r in &mut records {
        r.importance = importance
            .iter()
            .find(|i| i.model == r.target_model() && i.importance.concept_index == r.concept_index)
            .map(|i| i.importance.importance);
    }

    let mut feature_importance = Vec::new();
    if cfg.importance_repeats > 0 {
        for direction in [Direction::OneToTwo, Direction::TwoToOne] {
            let (src, tgt) = direction.models();
            let a_src = if src == 1 { &m1.a } else { &m2.a };
            let u_tgt = if tgt == 1 { &u1 } else { &u2 };
            let x = a_src.select(Axis(0), &split.eval);
            let y = u_tgt.select(Axis(0), &split.eval);
            let pi = permutation_importance(
                scores.regressor(direction),
                x.view(),
                y.view(),
                cfg.importance_repeats,
                cfg.seed,
            )?;
            feature_importance.push(FeatureImportance {
                class_id: class.to_string(),
                direction,
                baseline_r2: pi.baseline,
                mean: pi.mean.to_vec(),
                std: pi.std.to_vec(),
            });
        }
    }

    let result = ClassResult {
        class_id: class.to_string(),
        layer1: layer1.to_string(),
        layer2: layer2.to_string(),
        input_hash,
        shared_rows: shared.manifest.len(),
        train_rows: split.train.len(),
        eval_rows: split.eval.len(),
        unconverged: scores.regressors.iter().map(|r| r.unconverged).sum(),
        records,
        outcomes,
        importance,
        feature_importance,
        notes,
    };
    persist_class(&ws.layout, &result, &shared.manifest, &split, &u1, &u2, &scores)?;
    Ok(result)
}

fn persist_class(
    layout: &Layout,
    result: &ClassResult,
    shared: &PatchManifest,
    split: &EvalSplit,
    u1: &Array2<f64>,
    u2: &Array2<f64>,
    scores: &ConceptScores,
) -> Result<()> {
    let dir = layout.compare_class_dir(&result.class_id);
    let mut coefficients = BTreeMap::new();
    for (model, u) in [(1u8, u1), (2, u2)] {
        let p = scores.predictions(model);
        coefficients.insert(coefficient_member(model, "shared"), u.clone());
        coefficients.insert(coefficient_member(model, "eval"), p.truth.clone());
        coefficients.insert(coefficient_member(model, "self"), p.self_pred.clone());
        coefficients.insert(coefficient_member(model, "cross"), p.cross_pred.clone());
    }
    save_npz(&dir.join("coefficients.npz"), &coefficients)?;
    let weights = scores
        .regressors
        .iter()
        .map(|r| (regressor_member(r.direction), r.weights.clone()))
        .collect();
    save_npz(&dir.join("regressors.npz"), &weights)?;
    let metas: Vec<RegressorMeta> = scores.regressors.iter().map(RegressorMeta::from).collect();
    write_json(&dir.join("regressors.json"), &metas)?;
    write_json(
        &dir.join("rows.json"),
        &ClassRows {
            shared: shared.clone(),
            train: split.train.clone(),
            eval: split.eval.clone(),
        },
    )?;
    // Written last: a readable result marks a complete class directory.
    write_json(&dir.join("result.json"), result)
}

pub(super) fn load_class(layout: &Layout, class: &str) -> Result<(ClassResult, ClassRows, BTreeMap<String, Array2<f64>>)> {
    let dir = layout.compare_class_dir(class);
    let missing = || CliError::StageDependency {
        stage: "report",
        needs: "compare",
        missing: format!("comparison results for class {class}"),
    };
    let result: ClassResult = read_json(&dir.join("result.json")).map_err(|_| missing())?;
    let rows: ClassRows = read_json(&dir.join("rows.json")).map_err(|_| missing())?;
    let coefficients = load_npz(&dir.join("coefficients.npz")).map_err(|_| missing())?;
    Ok((result, rows, coefficients))
}

pub(super) fn load_run(layout: &Layout) -> Result<CompareRun> {
    read_json(&layout.compare_dir().join("run.json")).map_err(|_| CliError::StageDependency {
        stage: "report",
        needs: "compare",
        missing: "compare/run.json".into(),
    })
}

fn summary_csv(results: &[ClassResult]) -> String {
    let mut out = String::from(
        "class_id,direction,concept_index,cmcs_pearson,cmcs_spearman,smcs_pearson,smcs_spearman,\
         delta_pearson,delta_l2,delta_kl,match_accuracy,importance,degenerate\n",
    );
    for res in results {
        for r in &res.records {
            let o = res
                .outcomes
                .iter()
                .find(|o| o.direction == r.direction && o.concept_index == r.concept_index);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                csv_field(&r.class_id),
                r.direction,
                r.concept_index,
                r.cmcs_pearson,
                r.cmcs_spearman,
                r.smcs_pearson,
                r.smcs_spearman,
                r.delta_pearson,
                csv_number(o.map(|o| o.delta_l2)),
                csv_number(o.map(|o| o.delta_kl)),
                csv_number(o.map(|o| o.match_accuracy)),
                csv_number(r.importance),
                r.degenerate,
            ));
        }
    }
    out
}

/// Compares every selected class on the compare layers and writes the
/// merged result files. Classes run in parallel; outputs follow class order.
pub fn compare(ws: &Workspace) -> Result<Vec<ClassResult>> {
    let classes = ws.classes()?;
    let (layer1, layer2) = (ws.compare_layer(1)?, ws.compare_layer(2)?);
    let results = run_ordered(ws.config.jobs, &classes, |c| compare_class(ws, c, &layer1, &layer2))?;

    let dir = ws.layout.compare_dir();
    let records: Vec<&SimilarityRecord> = results.iter().flat_map(|r| &r.records).collect();
    let outcomes: Vec<&ReplacementOutcome> = results.iter().flat_map(|r| &r.outcomes).collect();
    let importance: Vec<&ModelImportance> = results.iter().flat_map(|r| &r.importance).collect();
    let features: Vec<&FeatureImportance> = results.iter().flat_map(|r| &r.feature_importance).collect();
    write_jsonl(&dir.join("similarity.jsonl"), &records)?;
    write_jsonl(&dir.join("replacement.jsonl"), &outcomes)?;
    write_jsonl(&dir.join("importance.jsonl"), &importance)?;
    write_jsonl(&dir.join("feature_importance.jsonl"), &features)?;
    write_bytes(&dir.join("summary.csv"), summary_csv(&results).as_bytes())?;
    write_json(
        &dir.join("run.json"),
        &CompareRun {
            classes,
            layer1,
            layer2,
            input_hashes: results.iter().map(|r| r.input_hash.clone()).collect(),
        },
    )?;
    Ok(results)
}

//! Concept reports: selection by delta_kl percentile, patch explanations,
//! per-concept JSON, a ranking table, and optional collages.

use std::cmp::Ordering;
use std::path::PathBuf;

use conceptsim::explain::{
    emit_collage_bundle, emit_report, explain_concept, report_file_name, CollageBundle, CollageOptions,
    ConceptExplanation, ReportIndex,
};
use conceptsim::replace::ReplacementOutcome;
use conceptsim::similarity::SimilarityRecord;

use super::compare::{coefficient_member, load_class, load_run};
use super::Layout;
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::store::{csv_field, csv_number, write_bytes};

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub index: ReportIndex,
    /// Concepts available before selection.
    pub candidates: usize,
    /// Selected concepts, highest ΔPearson first.
    pub ranking: Vec<SimilarityRecord>,
    pub collages: Vec<CollageBundle>,
}

/// Indices of the `⌈(1 − p/100)·N⌉` largest values, largest first; ties
/// keep the earlier index first.
pub fn percentile_selection(values: &[f64], percentile: f64) -> Vec<usize> {
    // Scaled in percent first so that e.g. 30% of 10 is exactly 3.
    let share = (100.0 - percentile) * values.len() as f64 / 100.0;
    let keep = (share - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(keep.min(values.len()));
    order
}

struct Candidate {
    record: SimilarityRecord,
    outcome: Option<ReplacementOutcome>,
}

fn ranking_csv(ranking: &[SimilarityRecord], outcomes: &[ReplacementOutcome]) -> String {
    let mut out = String::from("rank,class_id,direction,concept_index,delta_pearson,delta_kl,cmcs_pearson,file\n");
    for (i, r) in ranking.iter().enumerate() {
        let kl = outcomes
            .iter()
            .find(|o| o.class_id == r.class_id && o.direction == r.direction && o.concept_index == r.concept_index)
            .map(|o| o.delta_kl);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            i + 1,
            csv_field(&r.class_id),
            r.direction,
            r.concept_index,
            r.delta_pearson,
            csv_number(kl),
            r.cmcs_pearson,
            csv_field(&report_file_name(&r.class_id, r.direction, r.concept_index)),
        ));
    }
    out
}

/// Builds reports for the concepts selected from the last `compare` run.
/// The report directory is rebuilt from scratch on every run.
pub fn report(config: &PipelineConfig) -> Result<ReportOutput> {
    let layout = Layout::new(&config.out);
    let run = load_run(&layout)?;
    let mut classes = Vec::with_capacity(run.classes.len());
    let mut candidates = Vec::new();
    for class in &run.classes {
        let (result, rows, coefficients) = load_class(&layout, class)?;
        for record in &result.records {
            let outcome = result
                .outcomes
                .iter()
                .find(|o| o.direction == record.direction && o.concept_index == record.concept_index)
                .cloned();
            candidates.push(Candidate {
                record: record.clone(),
                outcome,
            });
        }
        classes.push((result, rows, coefficients));
    }

    // Without any replacement outcome there is nothing to filter on.
    let scored: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].outcome.is_some()).collect();
    let mut selected: Vec<usize> = match config.report_percentile {
        p if p > 0.0 && !scored.is_empty() => {
            let kl: Vec<f64> = scored
                .iter()
                .map(|&i| candidates[i].outcome.as_ref().map_or(0.0, |o| o.delta_kl))
                .collect();
            percentile_selection(&kl, p).into_iter().map(|j| scored[j]).collect()
        }
        _ => (0..candidates.len()).collect(),
    };
    selected.sort_by(|&a, &b| {
        let (ra, rb) = (&candidates[a].record, &candidates[b].record);
        rb.delta_pearson
            .partial_cmp(&ra.delta_pearson)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let explain_opts = config.explain_options();
    let mut explanations: Vec<ConceptExplanation> = Vec::with_capacity(selected.len());
    for &i in &selected {
        let r = &candidates[i].record;
        let (_, rows, coefficients) = classes
            .iter()
            .find(|(res, _, _)| res.class_id == r.class_id)
            .expect("candidates come from loaded classes");
        let model = r.target_model();
        let member = |what: &str| {
            coefficients.get(&coefficient_member(model, what)).ok_or_else(|| CliError::StageDependency {
                stage: "report",
                needs: "compare",
                missing: format!("{} coefficients of class {}", coefficient_member(model, what), r.class_id),
            })
        };
        let (truth, cross) = (member("eval")?, member("cross")?);
        let eval_manifest = rows.shared.select(&rows.eval);
        explanations.push(explain_concept(
            &r.class_id,
            r.concept_index,
            r.direction,
            truth.column(r.concept_index),
            cross.column(r.concept_index),
            &eval_manifest,
            &explain_opts,
        )?);
    }

    let dir = layout.report_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|source| CliError::File {
            path: dir.clone(),
            source,
        })?;
    }
    let records: Vec<SimilarityRecord> = candidates.iter().map(|c| c.record.clone()).collect();
    let outcomes: Vec<ReplacementOutcome> = candidates.iter().filter_map(|c| c.outcome.clone()).collect();
    let index = emit_report(&explanations, &records, &outcomes, &dir)?;
    let ranking: Vec<SimilarityRecord> = selected.iter().map(|&i| candidates[i].record.clone()).collect();
    write_bytes(&dir.join("ranking.csv"), ranking_csv(&ranking, &outcomes).as_bytes())?;

    let mut collages = Vec::new();
    if let Some(image_dir) = &config.image_dir {
        let opts = CollageOptions {
            patches: config.collage_patches,
            image_size: config.collage_image_size,
        };
        let out: PathBuf = dir.join("collages");
        for e in &explanations {
            collages.push(emit_collage_bundle(e, image_dir, &out, &opts)?);
        }
    }
    Ok(ReportOutput {
        index,
        candidates: candidates.len(),
        ranking,
        collages,
    })
}

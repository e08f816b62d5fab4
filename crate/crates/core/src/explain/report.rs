use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConceptExplanation, PatchRef};
use crate::actio::write_atomic;
use crate::error::{Error, Result};
use crate::regress::Direction;
use crate::replace::ReplacementOutcome;
use crate::similarity::SimilarityRecord;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Presentation thresholds for colouring the predicted-vs-true scatter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterRegions {
    /// Residuals beyond ± this margin are drawn as over/under-predicted.
    pub residual_margin: f64,
    /// True coefficients above this value are drawn as strong activations.
    pub high_truth: f64,
}

impl ScatterRegions {
    /// Half a standard deviation of the truth as margin; its 75th percentile
    /// as the strong-activation threshold.
    pub fn from_truth(truth: &[f64]) -> Self {
        if truth.is_empty() {
            return ScatterRegions {
                residual_margin: 0.0,
                high_truth: 0.0,
            };
        }
        let n = truth.len() as f64;
        let mean = truth.iter().sum::<f64>() / n;
        let std = (truth.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n).sqrt();
        let mut sorted = truth.to_vec();
        sorted.sort_by(f64::total_cmp);
        let idx = ((sorted.len() - 1) as f64 * 0.75).round() as usize;
        ScatterRegions {
            residual_margin: 0.5 * std,
            high_truth: sorted[idx],
        }
    }
}

/// Everything known about one concept, as written to its report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptReport {
    pub schema_version: u32,
    pub class_id: String,
    pub concept_index: usize,
    pub direction: Direction,
    pub similarity: Option<SimilarityRecord>,
    pub replacement: Option<ReplacementOutcome>,
    pub explanation: ConceptExplanation,
    pub scatter_regions: ScatterRegions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub class_id: String,
    pub concept_index: usize,
    pub direction: Direction,
    /// Relative to the index file.
    pub file: String,
    pub cmcs_pearson: Option<f64>,
    pub delta_pearson: Option<f64>,
    pub delta_kl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportIndex {
    pub schema_version: u32,
    pub reports: Vec<IndexEntry>,
}

/// File-name-safe, injective encoding of an identifier: ASCII letters,
/// digits, `-` and non-leading `.` pass through; every other byte becomes
/// `_xx` (lowercase hex).
pub fn escape_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'.' && !out.is_empty() {
            out.push(b as char);
        } else {
            out.push_str(&format!("_{b:02x}"));
        }
    }
    out
}

/// Path of a concept's report relative to the report directory; distinct
/// ids always map to distinct names.
pub fn report_file_name(class_id: &str, direction: Direction, concept_index: usize) -> String {
    let (src, tgt) = direction.models();
    format!(
        "concepts/{}__{src}to{tgt}__{concept_index:03}.json",
        escape_component(class_id)
    )
}

type Key = (String, Direction, usize);

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, |f| Ok(f.write_all(&bytes)?))
}

/// Writes one JSON report per explained concept plus `index.json`, joining
/// similarity records and replacement outcomes by (class, direction, concept).
pub fn emit_report(
    explanations: &[ConceptExplanation],
    records: &[SimilarityRecord],
    outcomes: &[ReplacementOutcome],
    dir: &Path,
) -> Result<ReportIndex> {
    let records: BTreeMap<Key, &SimilarityRecord> = records
        .iter()
        .map(|r| ((r.class_id.clone(), r.direction, r.concept_index), r))
        .collect();
    let outcomes: BTreeMap<Key, &ReplacementOutcome> = outcomes
        .iter()
        .map(|o| ((o.class_id.clone(), o.direction, o.concept_index), o))
        .collect();
    let mut ordered: Vec<&ConceptExplanation> = explanations.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.class_id, a.direction, a.concept_index).cmp(&(&b.class_id, b.direction, b.concept_index))
    });

    let mut entries = Vec::with_capacity(ordered.len());
    for e in ordered {
        let key = (e.class_id.clone(), e.direction, e.concept_index);
        let report = ConceptReport {
            schema_version: REPORT_SCHEMA_VERSION,
            class_id: e.class_id.clone(),
            concept_index: e.concept_index,
            direction: e.direction,
            similarity: records.get(&key).map(|r| (*r).clone()),
            replacement: outcomes.get(&key).map(|o| (*o).clone()),
            explanation: e.clone(),
            scatter_regions: ScatterRegions::from_truth(&e.scatter.truth),
        };
        check_report(&report)?;
        let file = report_file_name(&e.class_id, e.direction, e.concept_index);
        write_json(&dir.join(&file), &report)?;
        entries.push(IndexEntry {
            class_id: e.class_id.clone(),
            concept_index: e.concept_index,
            direction: e.direction,
            file,
            cmcs_pearson: report.similarity.as_ref().map(|s| s.cmcs_pearson),
            delta_pearson: report.similarity.as_ref().map(|s| s.delta_pearson),
            delta_kl: report.replacement.as_ref().map(|o| o.delta_kl),
        });
    }
    let index = ReportIndex {
        schema_version: REPORT_SCHEMA_VERSION,
        reports: entries,
    };
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}

fn fail(msg: impl Into<String>) -> Error {
    Error::Report(msg.into())
}

fn check_unit(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(fail(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_list(name: &str, list: &[PatchRef], rows: usize, excluded: Option<&BTreeSet<&str>>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in list {
        if !seen.insert(p.image_id.as_str()) {
            return Err(fail(format!("{name} lists image {:?} twice", p.image_id)));
        }
        if p.row >= rows {
            return Err(fail(format!("{name} references row {} of {rows}", p.row)));
        }
        if excluded.is_some_and(|ex| ex.contains(p.image_id.as_str())) {
            return Err(fail(format!("{name} contains excluded image {:?}", p.image_id)));
        }
        if !p.score.is_finite() {
            return Err(fail(format!("{name} has a non-finite score")));
        }
    }
    Ok(())
}

fn check_report(r: &ConceptReport) -> Result<()> {
    if r.schema_version != REPORT_SCHEMA_VERSION {
        return Err(fail(format!("unknown schema version {}", r.schema_version)));
    }
    if !r.direction.is_cross() {
        return Err(fail("reports describe cross-model directions only"));
    }
    let e = &r.explanation;
    if (&e.class_id, e.concept_index, e.direction) != (&r.class_id, r.concept_index, r.direction) {
        return Err(fail("explanation ids disagree with the report"));
    }
    if e.scatter.truth.len() != e.scatter.predicted.len() {
        return Err(fail("scatter series differ in length"));
    }
    let rows = e.scatter.truth.len();
    let excluded: BTreeSet<&str> = e.excluded_images.iter().map(String::as_str).collect();
    check_list("top_real", &e.top_real, rows, None)?;
    check_list("over_predicted", &e.over_predicted, rows, Some(&excluded))?;
    check_list("under_predicted", &e.under_predicted, rows, Some(&excluded))?;
    if let Some(s) = &r.similarity {
        if (&s.class_id, s.concept_index, s.direction) != (&r.class_id, r.concept_index, r.direction) {
            return Err(fail("similarity ids disagree with the report"));
        }
        for (name, v) in [
            ("cmcs_pearson", s.cmcs_pearson),
            ("cmcs_spearman", s.cmcs_spearman),
            ("smcs_pearson", s.smcs_pearson),
            ("smcs_spearman", s.smcs_spearman),
        ] {
            check_unit(name, v, -1.0, 1.0)?;
        }
        check_unit("delta_pearson", s.delta_pearson, -2.0, 2.0)?;
    }
    if let Some(o) = &r.replacement {
        if (&o.class_id, o.concept_index, o.direction) != (&r.class_id, r.concept_index, r.direction) {
            return Err(fail("replacement ids disagree with the report"));
        }
        check_unit("delta_l2", o.delta_l2, 0.0, f64::INFINITY)?;
        check_unit("delta_kl", o.delta_kl, 0.0, f64::INFINITY)?;
        check_unit("match_accuracy", o.match_accuracy, 0.0, 1.0)?;
    }
    Ok(())
}

/// Parses and checks one report document.
pub fn validate_report(doc: &serde_json::Value) -> Result<ConceptReport> {
    let report: ConceptReport = serde_json::from_value(doc.clone()).map_err(|e| fail(e.to_string()))?;
    check_report(&report)?;
    Ok(report)
}

/// Parses an index document and validates every report it references,
/// resolving paths against `dir`.
pub fn validate_index(doc: &serde_json::Value, dir: &Path) -> Result<ReportIndex> {
    let index: ReportIndex = serde_json::from_value(doc.clone()).map_err(|e| fail(e.to_string()))?;
    if index.schema_version != REPORT_SCHEMA_VERSION {
        return Err(fail(format!("unknown schema version {}", index.schema_version)));
    }
    let mut files = BTreeSet::new();
    for entry in &index.reports {
        if !files.insert(entry.file.as_str()) {
            return Err(fail(format!("index lists {} twice", entry.file)));
        }
        let text = std::fs::read_to_string(dir.join(&entry.file))?;
        let report = validate_report(&serde_json::from_str(&text)?)?;
        if (&report.class_id, report.concept_index, report.direction)
            != (&entry.class_id, entry.concept_index, entry.direction)
        {
            return Err(fail(format!("{} does not match its index entry", entry.file)));
        }
    }
    Ok(index)
}

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::correlation::{pearson, spearman, Correlation};
use crate::actio::PatchManifest;
use crate::error::{Error, Result};
use crate::regress::{fit_concept_regressor, predict_coefficients, ConceptRegressor, Direction, RegressorOptions};

/// Per-concept similarity of one model's concept to the other model.
///
/// `direction` is the cross direction whose predictions are scored: for a
/// concept of model 2 it is `1->2` (model 1's activations predicting it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub class_id: String,
    pub concept_index: usize,
    pub direction: Direction,
    pub cmcs_pearson: f64,
    pub cmcs_spearman: f64,
    pub smcs_pearson: f64,
    pub smcs_spearman: f64,
    pub delta_pearson: f64,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<f64>,
}

impl SimilarityRecord {
    /// The model (1 or 2) owning the scored concept.
    pub fn target_model(&self) -> u8 {
        self.direction.models().1
    }
}

/// Row indices (into the shared patch set) used to fit and to score.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalSplit {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl EvalSplit {
    /// Train and evaluate on every row.
    pub fn all(n: usize) -> Self {
        EvalSplit {
            train: (0..n).collect(),
            eval: (0..n).collect(),
        }
    }

    /// Holds out whole images: a seeded `fraction` of the distinct images
    /// (at least one, and at least one left for training) goes to the
    /// evaluation rows. A fraction of 0 trains and evaluates on every row.
    pub fn by_image(manifest: &PatchManifest, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!(
                "evaluation fraction {fraction} must lie in [0, 1)"
            )));
        }
        let n = manifest.entries.len();
        if fraction == 0.0 {
            return Ok(EvalSplit::all(n));
        }
        let images: BTreeSet<&str> = manifest.entries.iter().map(|e| e.image_id.as_str()).collect();
        if images.len() < 2 {
            return Err(Error::InvalidArgument(
                "an image-level split needs at least two images".into(),
            ));
        }
        let mut images: Vec<&str> = images.into_iter().collect();
        images.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let held = ((fraction * images.len() as f64).round() as usize).clamp(1, images.len() - 1);
        let held: BTreeSet<&str> = images[..held].iter().copied().collect();
        let (eval, train) = (0..n).partition(|&r| held.contains(manifest.entries[r].image_id.as_str()));
        Ok(EvalSplit { train, eval })
    }
}

/// True and predicted coefficients of one model's concepts on the eval rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPredictions {
    pub truth: Array2<f64>,
    /// Predicted from the model's own activations.
    pub self_pred: Array2<f64>,
    /// Predicted from the other model's activations.
    pub cross_pred: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ConceptScores {
    /// Concepts of model 1, then model 2, each in concept order.
    pub records: Vec<SimilarityRecord>,
    pub model1: TargetPredictions,
    pub model2: TargetPredictions,
    /// In [`Direction::ALL`] order.
    pub regressors: Vec<ConceptRegressor>,
}

impl ConceptScores {
    pub fn predictions(&self, model: u8) -> &TargetPredictions {
        if model == 1 {
            &self.model1
        } else {
            &self.model2
        }
    }

    pub fn regressor(&self, direction: Direction) -> &ConceptRegressor {
        let i = Direction::ALL.iter().position(|d| *d == direction).unwrap();
        &self.regressors[i]
    }
}

fn check_rows(split: &EvalSplit, n: usize) -> Result<()> {
    if split.train.is_empty() || split.eval.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "split needs training rows and at least two eval rows (got {} / {})",
            split.train.len(),
            split.eval.len()
        )));
    }
    if let Some(bad) = split.train.iter().chain(&split.eval).find(|&&i| i >= n) {
        return Err(Error::Dimension(format!("split row {bad} out of range for {n} rows")));
    }
    Ok(())
}

fn column_scores(truth: ArrayView2<f64>, pred: ArrayView2<f64>, j: usize) -> (Correlation, Correlation) {
    let (t, p) = (truth.column(j), pred.column(j));
    // lengths are equal and ≥ 2 by construction
    (pearson(t, p).unwrap(), spearman(t, p).unwrap())
}

/// Fits the four direction regressors on the training rows and scores every
/// concept of both models on the evaluation rows.
pub fn score_concepts(
    class_id: &str,
    a1: ArrayView2<f64>,
    a2: ArrayView2<f64>,
    u1: ArrayView2<f64>,
    u2: ArrayView2<f64>,
    split: &EvalSplit,
    opts: &RegressorOptions,
) -> Result<ConceptScores> {
    let n = a1.nrows();
    for (what, rows) in [("A2", a2.nrows()), ("U1", u1.nrows()), ("U2", u2.nrows())] {
        if rows != n {
            return Err(Error::Dimension(format!("{what} has {rows} rows, A1 has {n}")));
        }
    }
    check_rows(split, n)?;
    let train = |m: ArrayView2<f64>| m.select(Axis(0), &split.train);
    let eval = |m: ArrayView2<f64>| m.select(Axis(0), &split.eval);
    let (a1_tr, a2_tr, u1_tr, u2_tr) = (train(a1), train(a2), train(u1), train(u2));
    let (a1_ev, a2_ev) = (eval(a1), eval(a2));

    let mut regressors = Vec::with_capacity(4);
    let mut preds = Vec::with_capacity(4);
    for direction in Direction::ALL {
        let (src, tgt) = direction.models();
        let (a_tr, a_ev) = if src == 1 { (&a1_tr, &a1_ev) } else { (&a2_tr, &a2_ev) };
        let u_tr = if tgt == 1 { &u1_tr } else { &u2_tr };
        let reg = fit_concept_regressor(a_tr.view(), u_tr.view(), direction, opts)?;
        preds.push(predict_coefficients(&reg, a_ev.view())?);
        regressors.push(reg);
    }
    let [p12, p21, p11, p22]: [Array2<f64>; 4] = preds.try_into().unwrap();
    let model1 = TargetPredictions {
        truth: eval(u1),
        self_pred: p11,
        cross_pred: p21,
    };
    let model2 = TargetPredictions {
        truth: eval(u2),
        self_pred: p22,
        cross_pred: p12,
    };

    let mut records = Vec::with_capacity(u1.ncols() + u2.ncols());
    for (target, direction) in [(&model1, Direction::TwoToOne), (&model2, Direction::OneToTwo)] {
        for j in 0..target.truth.ncols() {
            let (cp, cs) = column_scores(target.truth.view(), target.cross_pred.view(), j);
            let (sp, ss) = column_scores(target.truth.view(), target.self_pred.view(), j);
            records.push(SimilarityRecord {
                class_id: class_id.to_string(),
                concept_index: j,
                direction,
                cmcs_pearson: cp.value,
                cmcs_spearman: cs.value,
                smcs_pearson: sp.value,
                smcs_spearman: ss.value,
                delta_pearson: sp.value - cp.value,
                degenerate: cp.degenerate || cs.degenerate || sp.degenerate || ss.degenerate,
                importance: None,
            });
        }
    }
    Ok(ConceptScores {
        records,
        model1,
        model2,
        regressors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>())
    }

    fn half_split(n: usize) -> EvalSplit {
        EvalSplit {
            train: (0..n).filter(|i| i % 3 != 0).collect(),
            eval: (0..n).filter(|i| i % 3 == 0).collect(),
        }
    }

    #[test]
    fn self_comparison_has_zero_delta() {
        let a = random(90, 12, 1);
        let u = random(90, 4, 2);
        let s = score_concepts("c", a.view(), a.view(), u.view(), u.view(), &half_split(90), &RegressorOptions::default())
            .unwrap();
        assert_eq!(s.records.len(), 8);
        for r in &s.records {
            assert_eq!(r.cmcs_pearson, r.smcs_pearson);
            assert_eq!(r.delta_pearson, 0.0);
        }
    }

    #[test]
    fn predictable_targets_score_high() {
        let a1 = random(120, 10, 3);
        let map = random(10, 3, 4);
        let u2 = a1.dot(&map);
        let a2 = u2.dot(&random(3, 8, 5));
        let u1 = random(120, 3, 6);
        let opts = RegressorOptions {
            lambda: 1e-4,
            ..RegressorOptions::default()
        };
        let s = score_concepts("c", a1.view(), a2.view(), u1.view(), u2.view(), &half_split(120), &opts).unwrap();
        for r in s.records.iter().filter(|r| r.direction == Direction::OneToTwo) {
            assert!(r.cmcs_pearson > 0.99, "{r:?}");
        }
        assert_eq!(s.records[0].target_model(), 1);
        assert_eq!(s.regressor(Direction::TwoToTwo).direction, Direction::TwoToTwo);
    }

    #[test]
    fn constant_target_is_flagged() {
        let a = random(30, 5, 7);
        let mut u = random(30, 2, 8);
        u.column_mut(1).fill(2.0);
        let s = score_concepts("c", a.view(), a.view(), u.view(), u.view(), &half_split(30), &RegressorOptions::default())
            .unwrap();
        assert!(s.records[1].degenerate);
        assert_eq!(s.records[1].cmcs_pearson, 0.0);
        assert!(!s.records[0].degenerate);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let a = random(30, 5, 7);
        let u = random(29, 2, 8);
        let opts = RegressorOptions::default();
        assert!(score_concepts("c", a.view(), a.view(), u.view(), u.view(), &half_split(29), &opts).is_err());
        let split = EvalSplit { train: vec![0, 1, 2, 3, 4], eval: vec![40, 1] };
        assert!(score_concepts("c", a.view(), a.view(), a.view(), a.view(), &split, &opts).is_err());
    }

    #[test]
    fn image_split_keeps_images_whole() {
        let m = crate::explain::tests::grid_manifest(10, 4);
        let split = EvalSplit::by_image(&m, 0.3, 5).unwrap();
        assert_eq!(split.eval.len(), 12);
        assert_eq!(split.train.len() + split.eval.len(), 40);
        let eval_images: BTreeSet<&str> = split.eval.iter().map(|&r| m.entries[r].image_id.as_str()).collect();
        assert!(split.train.iter().all(|&r| !eval_images.contains(m.entries[r].image_id.as_str())));
        assert_eq!(split, EvalSplit::by_image(&m, 0.3, 5).unwrap());
        assert_ne!(split, EvalSplit::by_image(&m, 0.3, 6).unwrap());
        assert_eq!(EvalSplit::by_image(&m, 0.0, 5).unwrap(), EvalSplit::all(40));
        assert_eq!(EvalSplit::by_image(&m, 0.01, 5).unwrap().eval.len(), 4);
        assert!(EvalSplit::by_image(&m, 1.0, 5).is_err());
    }

    #[test]
    fn record_json_uses_direction_labels() {
        let r = SimilarityRecord {
            class_id: "dog".into(),
            concept_index: 3,
            direction: Direction::OneToTwo,
            cmcs_pearson: 0.5,
            cmcs_spearman: 0.4,
            smcs_pearson: 0.9,
            smcs_spearman: 0.8,
            delta_pearson: 0.4,
            degenerate: false,
            importance: None,
        };
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"direction\":\"1->2\""));
        assert!(!text.contains("importance"));
        assert_eq!(serde_json::from_str::<SimilarityRecord>(&text).unwrap(), r);
    }
}

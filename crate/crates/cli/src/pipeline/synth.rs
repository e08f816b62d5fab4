//! Synthetic bundle pairs with known ground truth.

use std::collections::BTreeMap;
use std::path::PathBuf;

use conceptsim::actio::{save_bundle, save_npz};
use conceptsim::synthgen::{generate_linear_pair, generate_planted_pair, SyntheticSpec};
use serde::{Deserialize, Serialize};

use super::Layout;
use crate::config::{BundlePaths, PipelineConfig, SynthKind};
use crate::error::Result;
use crate::store::write_json;

/// `synth/truth.json`: what the generator planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub kind: SynthKind,
    pub spec: SyntheticSpec,
    /// Head output associated with the cue (planted pairs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<String>,
    /// Unit cue direction in model 2's feature space (planted pairs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant_direction: Option<Vec<f64>>,
    /// Per class, which patches carry the cue (planted pairs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicator: Option<BTreeMap<String, Vec<bool>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub model1: BundlePaths,
    pub model2: BundlePaths,
    pub truth: PathBuf,
}

/// Generates the configured pair and writes both bundles to the model
/// paths (by default `synth/model{1,2}.*`) plus the ground truth. For
/// planted pairs model 1 ignores the cue and model 2 uses it; for linear
/// pairs the latents and mixing matrices go to `synth/truth.npz`.
pub fn synth(config: &PipelineConfig) -> Result<SynthOutput> {
    let layout = Layout::new(&config.out);
    let spec = &config.synth.spec;
    let (model1, model2) = (config.model_paths(1), config.model_paths(2));
    let truth_path = layout.synth_dir().join("truth.json");
    let mut truth = SynthTruth {
        kind: config.synth.kind,
        spec: spec.clone(),
        target_class: None,
        plant_direction: None,
        indicator: None,
    };
    match config.synth.kind {
        SynthKind::Planted => {
            let pair = generate_planted_pair(spec)?;
            save_bundle(&pair.nc, &model1.bundle, &model1.manifest)?;
            save_bundle(&pair.ps, &model2.bundle, &model2.manifest)?;
            truth.target_class = Some(pair.target_class);
            truth.plant_direction = Some(pair.plant_direction.to_vec());
            truth.indicator = Some(pair.indicator);
        }
        SynthKind::Linear => {
            let pair = generate_linear_pair(spec)?;
            save_bundle(&pair.first, &model1.bundle, &model1.manifest)?;
            save_bundle(&pair.second, &model2.bundle, &model2.manifest)?;
            let mut arrays = BTreeMap::new();
            for (class, l) in pair.latents {
                arrays.insert(format!("latents/{class}"), l);
            }
            for (prefix, set) in [("mixing1", pair.mixing1), ("mixing2", pair.mixing2)] {
                for (layer, m) in set {
                    arrays.insert(format!("{prefix}/{layer}"), m);
                }
            }
            save_npz(&layout.synth_dir().join("truth.npz"), &arrays)?;
        }
    }
    write_json(&truth_path, &truth)?;
    Ok(SynthOutput {
        model1,
        model2,
        truth: truth_path,
    })
}

//! Pipeline configuration: one TOML file, every key optional.

use std::path::{Path, PathBuf};

use conceptsim::attribute::{Aggregation, AttributionTarget, CigOptions, DEFAULT_STEPS};
use conceptsim::explain::{ExplainOptions, DEFAULT_COLLAGE_PATCHES, DEFAULT_EXCLUDE_TOP, DEFAULT_TOP_N};
use conceptsim::factorize::{FactorizeOptions, Method, DEFAULT_CONCEPTS};
use conceptsim::regress::{LassoOptions, RegressorOptions, DEFAULT_FOLDS, DEFAULT_LAMBDA, DEFAULT_REPEATS};
use conceptsim::replace::{KlDirection, ReplacementOptions};
use conceptsim::similarity::CorrelationKind;
use conceptsim::synthgen::SyntheticSpec;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// NPZ archive and manifest of one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundlePaths {
    pub bundle: PathBuf,
    pub manifest: PathBuf,
}

impl BundlePaths {
    /// Where `synth` writes model `model` (1 or 2) under `out`.
    pub fn synthetic(out: &Path, model: u8) -> Self {
        let dir = out.join("synth");
        BundlePaths {
            bundle: dir.join(format!("model{model}.npz")),
            manifest: dir.join(format!("model{model}.json")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    /// NNMF for non-negative matrices, Semi-NMF otherwise.
    #[default]
    Auto,
    Nnmf,
    SemiNmf,
}

impl MethodChoice {
    pub fn resolve(self, a: ArrayView2<f64>) -> Method {
        match self {
            MethodChoice::Auto => Method::detect(a),
            MethodChoice::Nnmf => Method::Nnmf,
            MethodChoice::SemiNmf => Method::SemiNmf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// A cue-ignoring model 1 and a cue-sensitive model 2.
    #[default]
    Planted,
    /// Two models mixing the same latents.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Defaults to the bundle written by `synth` under `out`.
    pub model1: Option<BundlePaths>,
    pub model2: Option<BundlePaths>,
    /// Layers to decompose; empty selects every layer of the bundle.
    pub layers1: Vec<String>,
    pub layers2: Vec<String>,
    /// Layer used by `compare` and `report`; defaults to the last selected
    /// layer. It must feed the model's head for the replacement test.
    pub compare_layer1: Option<String>,
    pub compare_layer2: Option<String>,
    /// Classes to analyse; empty selects every class present in both bundles.
    pub classes: Vec<String>,

    pub k: usize,
    pub method: MethodChoice,
    pub max_iter: usize,
    pub tol: f64,

    pub lambda: f64,
    pub folds: usize,
    /// Fraction of images held out for CMCS/SMCS; 0 scores on the training rows.
    pub eval_fraction: f64,
    pub lasso_max_iter: usize,
    pub lasso_tol: f64,
    /// Shuffles per feature for permutation importance; 0 skips it.
    pub importance_repeats: usize,

    pub cig_steps: usize,
    pub cig_target: AttributionTarget,
    pub cig_aggregation: Aggregation,
    pub kl_direction: KlDirection,

    /// Correlation used by `layerwise`.
    pub layerwise_correlation: CorrelationKind,

    pub top_n: usize,
    pub exclude_top: usize,
    /// Report the concepts whose delta_kl lies above this percentile
    /// (the top ⌈(1 − p/100)·N⌉); 0 reports every concept.
    pub report_percentile: f64,
    /// Source images for collages; collages are skipped when unset.
    pub image_dir: Option<PathBuf>,
    pub collage_patches: usize,
    pub collage_image_size: Option<u32>,

    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
    pub out: PathBuf,

    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let lasso = LassoOptions::default();
        PipelineConfig {
            model1: None,
            model2: None,
            layers1: Vec::new(),
            layers2: Vec::new(),
            compare_layer1: None,
            compare_layer2: None,
            classes: Vec::new(),
            k: DEFAULT_CONCEPTS,
            method: MethodChoice::Auto,
            max_iter: FactorizeOptions::default().max_iter,
            tol: FactorizeOptions::default().tol,
            lambda: DEFAULT_LAMBDA,
            folds: DEFAULT_FOLDS,
            eval_fraction: 0.3,
            lasso_max_iter: lasso.max_iter,
            lasso_tol: lasso.tol,
            importance_repeats: DEFAULT_REPEATS,
            cig_steps: DEFAULT_STEPS,
            cig_target: AttributionTarget::Probability,
            cig_aggregation: Aggregation::Mean,
            kl_direction: KlDirection::SelfCross,
            layerwise_correlation: CorrelationKind::Pearson,
            top_n: DEFAULT_TOP_N,
            exclude_top: DEFAULT_EXCLUDE_TOP,
            report_percentile: 75.0,
            image_dir: None,
            collage_patches: DEFAULT_COLLAGE_PATCHES,
            collage_image_size: None,
            seed: 0,
            jobs: 1,
            out: PathBuf::from("conceptsim-out"),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Reads a configuration file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::File {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text).map_err(|e| CliError::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        config.validate()?;
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for paths in [&mut self.model1, &mut self.model2].into_iter().flatten() {
            fix(&mut paths.bundle);
            fix(&mut paths.manifest);
        }
        if let Some(dir) = &mut self.image_dir {
            fix(dir);
        }
        fix(&mut self.out);
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.folds < 1 {
            return fail("folds must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda {} must be finite and non-negative", self.lambda));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return fail(format!("eval_fraction {} must lie in [0, 1)", self.eval_fraction));
        }
        if !(self.tol >= 0.0 && self.lasso_tol > 0.0) {
            return fail("tolerances must be positive".into());
        }
        if self.cig_steps == 0 {
            return fail("cig_steps must be at least 1".into());
        }
        if !(0.0..=100.0).contains(&self.report_percentile) {
            return fail(format!("report_percentile {} must lie in [0, 100]", self.report_percentile));
        }
        self.synth.spec.validate()?;
        Ok(())
    }

    pub fn model_paths(&self, model: u8) -> BundlePaths {
        let chosen = if model == 1 { &self.model1 } else { &self.model2 };
        chosen
            .clone()
            .unwrap_or_else(|| BundlePaths::synthetic(&self.out, model))
    }

    pub fn factorize_options(&self) -> FactorizeOptions {
        FactorizeOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
        }
    }

    pub fn regressor_options(&self) -> RegressorOptions {
        RegressorOptions {
            lambda: self.lambda,
            folds: self.folds,
            seed: self.seed,
            lasso: LassoOptions {
                max_iter: self.lasso_max_iter,
                tol: self.lasso_tol,
            },
        }
    }

    pub fn cig_options(&self) -> CigOptions {
        CigOptions {
            steps: self.cig_steps,
            target: self.cig_target,
            aggregation: self.cig_aggregation,
        }
    }

    pub fn replacement_options(&self) -> ReplacementOptions {
        ReplacementOptions {
            kl_direction: self.kl_direction,
        }
    }

    pub fn explain_options(&self) -> ExplainOptions {
        ExplainOptions {
            top_n: self.top_n,
            exclude_top: self.exclude_top,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!((c.k, c.lambda, c.folds, c.cig_steps, c.top_n, c.exclude_top), (10, 0.1, 5, 30, 10, 10));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig {
            model1: Some(BundlePaths {
                bundle: "a.npz".into(),
                manifest: "a.json".into(),
            }),
            layers2: vec!["layer3".into(), "fc".into()],
            compare_layer2: Some("fc".into()),
            method: MethodChoice::SemiNmf,
            kl_direction: KlDirection::CrossSelf,
            report_percentile: 0.0,
            image_dir: Some("imgs".into()),
            ..PipelineConfig::default()
        };
        c.synth.kind = SynthKind::Linear;
        c.synth.spec.plant_strength = 0.0;
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let d = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("lamda = 0.2").is_err());
        assert!(PipelineConfig::from_toml("[synth.spec]\nplant = 1").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        for text in ["k = 0", "eval_fraction = 1.0", "lambda = -1.0", "report_percentile = 101.0", "cig_steps = 0"] {
            let c = PipelineConfig::from_toml(text).unwrap();
            assert!(matches!(c.validate(), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "out = \"results\"\n[model1]\nbundle = \"m.npz\"\nmanifest = \"/abs/m.json\"\n").unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.out, dir.path().join("results"));
        let m1 = c.model_paths(1);
        assert_eq!(m1.bundle, dir.path().join("m.npz"));
        assert_eq!(m1.manifest, PathBuf::from("/abs/m.json"));
        assert_eq!(c.model_paths(2), BundlePaths::synthetic(&c.out, 2));
    }
}

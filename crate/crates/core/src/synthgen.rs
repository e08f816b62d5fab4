//! Deterministic synthetic activation bundles with known ground truth.
//!
//! Both models of a pair see the same patches. Every patch carries sparse
//! non-negative latent factors shared by the two models, plus an
//! image-level context intensity (patches of one image share global
//! context). Each model mixes these through its own sparse non-negative
//! matrix. The planted pair additionally adds a dedicated direction to one
//! model's activations on indicator patches, emulating a visual cue only
//! that model has learned to use.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::actio::{patch_grid, ActivationMatrix, Bundle, LinearHead, PatchEntry, PatchManifest};
use crate::error::{Error, Result};
use crate::linalg::pinv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Images per class.
    pub n_images: usize,
    pub patches_per_image: usize,
    /// Feature width of the first model.
    pub d1: usize,
    /// Feature width of the second model.
    pub d2: usize,
    /// Shared patch-level latent factors.
    pub k_latent: usize,
    pub plant_strength: f64,
    /// Scale of the per-entry non-negative noise, |N(0, σ²)|.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Fraction of patches carrying the planted cue.
    pub indicator_rate: f64,
    /// Probability that a latent factor is active on a patch.
    pub latent_density: f64,
    /// Probability that a mixing-matrix entry is nonzero.
    pub mixing_density: f64,
    /// Scale of the shared image-level context factor.
    pub context_strength: f64,
    /// Feature dimensions reserved for the planted direction (planted model only).
    pub plant_dims: usize,
    /// Classes with patches in the bundles.
    pub n_classes: usize,
    /// Outputs of the linear heads (at least `max(n_classes, 2)`).
    pub head_classes: usize,
    /// Target-logit change per unit of the planted direction.
    pub plant_head_weight: f64,
    /// Layers per bundle; deeper layers replace a growing share of the
    /// shared latents with layer-specific ones.
    pub n_layers: usize,
    pub image_size: u32,
    pub patch_size: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_images: 100,
            patches_per_image: 16,
            d1: 64,
            d2: 64,
            k_latent: 8,
            plant_strength: 5.0,
            noise_sigma: 0.1,
            seed: 0,
            indicator_rate: 0.5,
            latent_density: 0.4,
            mixing_density: 0.3,
            context_strength: 1.0,
            plant_dims: 8,
            n_classes: 1,
            head_classes: 4,
            plant_head_weight: 1.0,
            n_layers: 1,
            image_size: 224,
            patch_size: 64,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_images", self.n_images),
            ("patches_per_image", self.patches_per_image),
            ("d1", self.d1),
            ("d2", self.d2),
            ("k_latent", self.k_latent),
            ("n_classes", self.n_classes),
            ("n_layers", self.n_layers),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        let reals = [
            ("plant_strength", self.plant_strength),
            ("noise_sigma", self.noise_sigma),
            ("context_strength", self.context_strength),
            ("plant_head_weight", self.plant_head_weight),
        ];
        if let Some((name, v)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("{name} = {v} must be finite and ≥ 0")));
        }
        for (name, p) in [
            ("indicator_rate", self.indicator_rate),
            ("latent_density", self.latent_density),
            ("mixing_density", self.mixing_density),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} = {p} must lie in [0, 1]")));
            }
        }
        if self.head_classes < self.n_classes.max(2) {
            return Err(Error::InvalidArgument(format!(
                "head_classes = {} cannot cover {} classes",
                self.head_classes, self.n_classes
            )));
        }
        if self.plant_dims >= self.d2 {
            return Err(Error::InvalidArgument(format!(
                "plant_dims = {} leaves no shared dimensions in d2 = {}",
                self.plant_dims, self.d2
            )));
        }
        let grid_n = grid_side(self.patches_per_image);
        patch_grid(self.image_size, self.patch_size, grid_n as u32)?;
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        self.n_images * self.patches_per_image
    }

    pub fn class_label(c: usize) -> String {
        format!("class{c}")
    }

    pub fn layer_label(l: usize) -> String {
        format!("layer{l}")
    }
}

fn grid_side(patches: usize) -> usize {
    (patches as f64).sqrt().ceil() as usize
}

/// Independent random streams derived from one seed, so that changing one
/// ingredient (e.g. the plant strength) leaves all other draws untouched.
#[derive(Clone, Copy)]
enum Stream {
    Latents = 1,
    Context,
    Mixing1,
    Mixing2,
    Noise1,
    Noise2,
    Indicator,
    Plant,
    Heads,
}

fn rng(seed: u64, stream: Stream, sub: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((stream as u64) << 32) | sub);
    r
}

fn abs_normal(r: &mut ChaCha8Rng) -> f64 {
    let z: f64 = StandardNormal.sample(r);
    z.abs()
}

fn sparse_abs_normal(rows: usize, cols: usize, density: f64, r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let v = abs_normal(r);
        if r.gen::<f64>() < density {
            v
        } else {
            0.0
        }
    })
}

fn sparse_uniform(rows: usize, cols: usize, density: f64, r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let v: f64 = r.gen();
        if r.gen::<f64>() < density {
            v
        } else {
            0.0
        }
    })
}

fn abs_noise(rows: usize, cols: usize, sigma: f64, r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| sigma * abs_normal(r))
}

fn manifest(spec: &SyntheticSpec, model_id: &str, head_labels: &[String]) -> Result<PatchManifest> {
    let rects = patch_grid(spec.image_size, spec.patch_size, grid_side(spec.patches_per_image) as u32)?;
    let mut entries = Vec::with_capacity(spec.n_classes * spec.n_patches());
    for c in 0..spec.n_classes {
        let class = SyntheticSpec::class_label(c);
        for i in 0..spec.n_images {
            for rect in rects.iter().take(spec.patches_per_image) {
                entries.push(PatchEntry {
                    image_id: format!("{class}_img{i:04}"),
                    rect: *rect,
                    class_id: class.clone(),
                    predicted_class: class.clone(),
                });
            }
        }
    }
    Ok(PatchManifest {
        image_size: spec.image_size,
        patch_size: spec.patch_size,
        model_id: model_id.to_string(),
        head_classes: Some(head_labels.to_vec()),
        entries,
    })
}

/// Latent factors of one class: `[shared latents | context]` per layer.
struct ClassLatents {
    /// `n × (k_latent + 1)` per layer; the last column is the context.
    per_layer: Vec<Array2<f64>>,
}

fn class_latents(spec: &SyntheticSpec, class: usize) -> ClassLatents {
    let n = spec.n_patches();
    let k = spec.k_latent;
    let sub = class as u64;
    let shared = sparse_abs_normal(n, k, spec.latent_density, &mut rng(spec.seed, Stream::Latents, sub << 16));
    let mut ctx_rng = rng(spec.seed, Stream::Context, sub);
    let context: Vec<f64> = (0..spec.n_images).map(|_| spec.context_strength * abs_normal(&mut ctx_rng)).collect();
    let per_layer = (0..spec.n_layers)
        .map(|l| {
            let mut lat = Array2::zeros((n, k + 1));
            lat.slice_mut(s![.., ..k]).assign(&shared);
            // layer l replaces round(k·l/n_layers) latents by private ones
            let private = (k * l + spec.n_layers / 2) / spec.n_layers;
            if private > 0 {
                let fresh = sparse_abs_normal(
                    n,
                    private,
                    spec.latent_density,
                    &mut rng(spec.seed, Stream::Latents, (sub << 16) | l as u64),
                );
                lat.slice_mut(s![.., k - private..k]).assign(&fresh);
            }
            for (row, mut r) in lat.rows_mut().into_iter().enumerate() {
                r[k] = context[row / spec.patches_per_image];
            }
            lat
        })
        .collect();
    ClassLatents { per_layer }
}

/// `(k_latent + 1) × d` non-negative mixing for one model and layer; the
/// last `reserved` columns are left empty.
fn mixing(spec: &SyntheticSpec, d: usize, reserved: usize, stream: Stream, layer: usize) -> Array2<f64> {
    let mut r = rng(spec.seed, stream, layer as u64);
    let k = spec.k_latent;
    let mut b = Array2::zeros((k + 1, d));
    let used = d - reserved;
    b.slice_mut(s![..k, ..used])
        .assign(&sparse_uniform(k, used, spec.mixing_density, &mut r));
    // context loads densely on the shared dimensions
    for j in 0..used {
        b[[k, j]] = r.gen::<f64>();
    }
    b
}

/// Classifier over `[latents | context]`, shared by both models' heads.
fn latent_classifier(spec: &SyntheticSpec) -> (Array2<f64>, Array1<f64>) {
    let mut r = rng(spec.seed, Stream::Heads, 0);
    let q = Array2::from_shape_fn((spec.k_latent + 1, spec.head_classes), |_| {
        let z: f64 = StandardNormal.sample(&mut r);
        z
    });
    let bias = Array1::from_shape_fn(spec.head_classes, |_| {
        let z: f64 = StandardNormal.sample(&mut r);
        0.1 * z
    });
    (q, bias)
}

fn head_labels(spec: &SyntheticSpec) -> Vec<String> {
    (0..spec.head_classes).map(SyntheticSpec::class_label).collect()
}

/// Head `pinv(B)·Q` that reads the latents back out of the activations
/// mixed by `b`, so `A·Wh ≈ [L | g]·Q`.
fn head_for(b: &Array2<f64>, q: &Array2<f64>, bias: &Array1<f64>, labels: &[String]) -> Result<LinearHead> {
    LinearHead::new(pinv(b).dot(q), bias.clone(), labels.to_vec())
}

/// Ground-truth mixing of one model: per layer, `(k_latent + 1) × d`.
pub type MixingSet = BTreeMap<String, Array2<f64>>;

/// Two bundles related by shared latents.
#[derive(Debug, Clone)]
pub struct LinearPair {
    pub first: Bundle,
    pub second: Bundle,
    /// Per class, `n × (k_latent + 1)` latents of the first layer
    /// (context in the last column).
    pub latents: BTreeMap<String, Array2<f64>>,
    pub mixing1: MixingSet,
    pub mixing2: MixingSet,
}

/// `A1 = [L | g]·B1` and `A2 = [L | g]·B2 + noise` with sparse non-negative
/// mixing matrices; heads classify the latents identically.
pub fn generate_linear_pair(spec: &SyntheticSpec) -> Result<LinearPair> {
    let spec = SyntheticSpec {
        plant_dims: 0,
        ..spec.clone()
    };
    spec.validate()?;
    let labels = head_labels(&spec);
    let (q, bias) = latent_classifier(&spec);
    let mut first = Bundle {
        manifest: manifest(&spec, "synthetic-1", &labels)?,
        matrices: BTreeMap::new(),
        head: None,
    };
    let mut second = Bundle {
        manifest: manifest(&spec, "synthetic-2", &labels)?,
        matrices: BTreeMap::new(),
        head: None,
    };
    let mut latents = BTreeMap::new();
    let (mut mixing1, mut mixing2) = (BTreeMap::new(), BTreeMap::new());
    for l in 0..spec.n_layers {
        let layer = SyntheticSpec::layer_label(l);
        mixing1.insert(layer.clone(), mixing(&spec, spec.d1, 0, Stream::Mixing1, l));
        mixing2.insert(layer.clone(), mixing(&spec, spec.d2, 0, Stream::Mixing2, l));
    }
    for c in 0..spec.n_classes {
        let class = SyntheticSpec::class_label(c);
        let lat = class_latents(&spec, c);
        for (l, lat_l) in lat.per_layer.iter().enumerate() {
            let layer = SyntheticSpec::layer_label(l);
            let a1 = lat_l.dot(&mixing1[&layer]);
            let mut a2 = lat_l.dot(&mixing2[&layer]);
            let mut noise_rng = rng(spec.seed, Stream::Noise2, ((c as u64) << 16) | l as u64);
            a2 += &abs_noise(a2.nrows(), a2.ncols(), spec.noise_sigma, &mut noise_rng);
            first.matrices.insert(
                (layer.clone(), class.clone()),
                ActivationMatrix::new(a1, "synthetic-1", layer.clone(), class.clone())?,
            );
            second.matrices.insert(
                (layer.clone(), class.clone()),
                ActivationMatrix::new(a2, "synthetic-2", layer, class.clone())?,
            );
        }
        latents.insert(class, lat.per_layer[0].clone());
    }
    let last = SyntheticSpec::layer_label(spec.n_layers - 1);
    first.head = Some(head_for(&mixing1[&last], &q, &bias, &labels)?);
    second.head = Some(head_for(&mixing2[&last], &q, &bias, &labels)?);
    first.validate()?;
    second.validate()?;
    Ok(LinearPair {
        first,
        second,
        latents,
        mixing1,
        mixing2,
    })
}

/// A pair where only the second ("plant-sensitive") model encodes a cue
/// present on a random subset of patches.
#[derive(Debug, Clone)]
pub struct PlantedPair {
    /// Model that ignores the cue.
    pub nc: Bundle,
    /// Model whose activations and head use the cue.
    pub ps: Bundle,
    /// Per class, one flag per patch (manifest order within the class).
    pub indicator: BTreeMap<String, Vec<bool>>,
    /// Unit-norm direction in the ps feature space, supported on the last
    /// `plant_dims` dimensions.
    pub plant_direction: Array1<f64>,
    /// Head class the ps model associates with the cue.
    pub target_class: String,
}

pub fn generate_planted_pair(spec: &SyntheticSpec) -> Result<PlantedPair> {
    spec.validate()?;
    if spec.plant_dims == 0 {
        return Err(Error::InvalidArgument("planted pair needs plant_dims ≥ 1".into()));
    }
    let labels = head_labels(spec);
    let (q, bias) = latent_classifier(spec);
    let mut plant_rng = rng(spec.seed, Stream::Plant, 0);
    let mut p = Array1::zeros(spec.d2);
    for j in spec.d2 - spec.plant_dims..spec.d2 {
        p[j] = 0.5 + 0.5 * plant_rng.gen::<f64>();
    }
    p /= p.dot(&p).sqrt();
    let target = 0;

    let mut nc = Bundle {
        manifest: manifest(spec, "synthetic-nc", &labels)?,
        matrices: BTreeMap::new(),
        head: None,
    };
    let mut ps = Bundle {
        manifest: manifest(spec, "synthetic-ps", &labels)?,
        matrices: BTreeMap::new(),
        head: None,
    };
    let mut mix_nc = BTreeMap::new();
    let mut mix_ps = BTreeMap::new();
    for l in 0..spec.n_layers {
        mix_nc.insert(l, mixing(spec, spec.d1, 0, Stream::Mixing1, l));
        mix_ps.insert(l, mixing(spec, spec.d2, spec.plant_dims, Stream::Mixing2, l));
    }
    let mut indicator = BTreeMap::new();
    for c in 0..spec.n_classes {
        let class = SyntheticSpec::class_label(c);
        let lat = class_latents(spec, c);
        let mut ind_rng = rng(spec.seed, Stream::Indicator, c as u64);
        let ind: Vec<bool> = (0..spec.n_patches()).map(|_| ind_rng.gen::<f64>() < spec.indicator_rate).collect();
        for (l, lat_l) in lat.per_layer.iter().enumerate() {
            let layer = SyntheticSpec::layer_label(l);
            let sub = ((c as u64) << 16) | l as u64;
            let mut a_nc = lat_l.dot(&mix_nc[&l]);
            a_nc += &abs_noise(a_nc.nrows(), a_nc.ncols(), spec.noise_sigma, &mut rng(spec.seed, Stream::Noise1, sub));
            let mut a_ps = lat_l.dot(&mix_ps[&l]);
            a_ps += &abs_noise(a_ps.nrows(), a_ps.ncols(), spec.noise_sigma, &mut rng(spec.seed, Stream::Noise2, sub));
            for (mut row, &on) in a_ps.axis_iter_mut(Axis(0)).zip(&ind) {
                if on {
                    row.scaled_add(spec.plant_strength, &p);
                }
            }
            nc.matrices.insert(
                (layer.clone(), class.clone()),
                ActivationMatrix::new(a_nc, "synthetic-nc", layer.clone(), class.clone())?,
            );
            ps.matrices.insert(
                (layer.clone(), class.clone()),
                ActivationMatrix::new(a_ps, "synthetic-ps", layer, class.clone())?,
            );
        }
        indicator.insert(class, ind);
    }
    let last = spec.n_layers - 1;
    nc.head = Some(head_for(&mix_nc[&last], &q, &bias, &labels)?);
    let mut ps_head = head_for(&mix_ps[&last], &q, &bias, &labels)?;
    // p is orthogonal to the row space of the ps mixing, so this loading
    // leaves the latent read-out untouched.
    ps_head.weights.column_mut(target).scaled_add(spec.plant_head_weight, &p);
    ps.head = Some(ps_head);
    nc.validate()?;
    ps.validate()?;
    Ok(PlantedPair {
        nc,
        ps,
        indicator,
        plant_direction: p,
        target_class: SyntheticSpec::class_label(target),
    })
}

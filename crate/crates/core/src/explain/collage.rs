use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::{imageops, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::report::report_file_name;
use super::{ConceptExplanation, PatchRef};
use crate::actio::write_atomic;
use crate::error::{Error, Result};

/// Patches per montage: a 3 × 3 grid.
pub const DEFAULT_COLLAGE_PATCHES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollageOptions {
    pub patches: usize,
    /// Side length the manifest rects refer to; sources of another size are
    /// resized to it before cropping. `None` crops sources as they are.
    pub image_size: Option<u32>,
}

impl Default for CollageOptions {
    fn default() -> Self {
        CollageOptions {
            patches: DEFAULT_COLLAGE_PATCHES,
            image_size: None,
        }
    }
}

/// Files written for one concept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollageBundle {
    /// Montage of the top real patches.
    pub ic1: PathBuf,
    /// Montage of the over-predicted patches.
    pub ic2: PathBuf,
    pub prompt: PathBuf,
}

const EXTENSIONS: [&str; 5] = ["", ".png", ".jpg", ".jpeg", ".PNG"];

fn find_image(dir: &Path, image_id: &str) -> Result<PathBuf> {
    EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{image_id}{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::MissingImage {
            image_id: image_id.to_string(),
            dir: dir.to_path_buf(),
        })
}

fn load_source(dir: &Path, image_id: &str, image_size: Option<u32>) -> Result<RgbImage> {
    let img = image::open(find_image(dir, image_id)?)?.to_rgb8();
    Ok(match image_size {
        Some(s) if img.dimensions() != (s, s) => imageops::resize(&img, s, s, imageops::FilterType::Triangle),
        _ => img,
    })
}

fn crop(img: &RgbImage, p: &PatchRef, cell: u32) -> Result<RgbImage> {
    let r = p.rect;
    if r.x + r.w > img.width() || r.y + r.h > img.height() {
        return Err(Error::Geometry(format!(
            "patch {:?} of image {:?} exceeds its {}×{} source",
            r,
            p.image_id,
            img.width(),
            img.height()
        )));
    }
    let tile = imageops::crop_imm(img, r.x, r.y, r.w, r.h).to_image();
    Ok(if (r.w, r.h) == (cell, cell) {
        tile
    } else {
        imageops::resize(&tile, cell, cell, imageops::FilterType::Triangle)
    })
}

/// Columns and rows of the montage grid for `n` tiles.
pub(crate) fn grid_shape(n: usize) -> (u32, u32) {
    if n == 0 {
        return (1, 1);
    }
    let cols = (n as f64).sqrt().ceil() as usize;
    (cols as u32, n.div_ceil(cols) as u32)
}

fn montage(patches: &[PatchRef], dir: &Path, opts: &CollageOptions, cell: u32) -> Result<RgbImage> {
    let (cols, rows) = grid_shape(patches.len());
    let mut canvas = RgbImage::new(cols * cell, rows * cell);
    for (i, p) in patches.iter().enumerate() {
        let tile = crop(&load_source(dir, &p.image_id, opts.image_size)?, p, cell)?;
        let (c, r) = (i as u32 % cols, i as u32 / cols);
        imageops::replace(&mut canvas, &tile, (c * cell) as i64, (r * cell) as i64);
    }
    Ok(canvas)
}

fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)?;
    write_atomic(path, |f| Ok(f.write_all(&buf)?))
}

fn prompt_text(e: &ConceptExplanation, ic1: &str, ic2: &str) -> String {
    let (src, tgt) = e.direction.models();
    format!(
        "Two image collages are attached.\n\
         \n\
         IC1 ({ic1}): image patches where a concept of model {tgt} (class {class}, concept {idx}) is most strongly present.\n\
         IC2 ({ic2}): image patches where model {src} expects this concept to be more present than model {tgt} finds it.\n\
         \n\
         Describe what the patches in each collage have in common, then compare the collages.\n\
         Answer in exactly this format:\n\
         \n\
         IC1: <common visual content of IC1>\n\
         IC2: <common visual content of IC2>\n\
         Similarity: <what IC1 and IC2 share>\n\
         Difference: <what distinguishes IC1 from IC2>\n\
         Semantically different: <yes|no>\n",
        class = e.class_id,
        idx = e.concept_index,
    )
}

/// Crops the top real (IC1) and over-predicted (IC2) patches from the source
/// images, writes both montages as PNG, and writes a prompt asking a
/// vision-language model to compare them.
pub fn emit_collage_bundle(
    explanation: &ConceptExplanation,
    image_dir: &Path,
    out_dir: &Path,
    opts: &CollageOptions,
) -> Result<CollageBundle> {
    let top: Vec<PatchRef> = explanation.top_real.iter().take(opts.patches).cloned().collect();
    let over: Vec<PatchRef> = explanation.over_predicted.iter().take(opts.patches).cloned().collect();
    let cell = top
        .iter()
        .chain(&over)
        .map(|p| p.rect.w.max(p.rect.h))
        .max()
        .unwrap_or(1);
    let name = report_file_name(&explanation.class_id, explanation.direction, explanation.concept_index);
    let stem = name.trim_start_matches("concepts/").trim_end_matches(".json");
    let bundle = CollageBundle {
        ic1: out_dir.join(format!("{stem}__ic1.png")),
        ic2: out_dir.join(format!("{stem}__ic2.png")),
        prompt: out_dir.join(format!("{stem}__prompt.txt")),
    };
    write_png(&bundle.ic1, &montage(&top, image_dir, opts, cell)?)?;
    write_png(&bundle.ic2, &montage(&over, image_dir, opts, cell)?)?;
    let file_name = |p: &Path| p.file_name().unwrap().to_string_lossy().into_owned();
    let prompt = prompt_text(explanation, &file_name(&bundle.ic1), &file_name(&bundle.ic2));
    write_atomic(&bundle.prompt, |f| Ok(f.write_all(prompt.as_bytes())?))?;
    Ok(bundle)
}

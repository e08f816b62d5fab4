use super::manifest::Rect;
use crate::error::{Error, Result};

/// Evenly spaced square patches covering an `image_size` square image.
///
/// Offsets along each axis are `round(i * (image_size - patch_size) / (grid_n - 1))`,
/// so the first patch touches the top-left corner and the last one the
/// bottom-right. Rects are returned in row-major order.
pub fn patch_grid(image_size: u32, patch_size: u32, grid_n: u32) -> Result<Vec<Rect>> {
    if patch_size == 0 || patch_size > image_size {
        return Err(Error::Geometry(format!(
            "patch_size {patch_size} does not fit image_size {image_size}"
        )));
    }
    if grid_n == 0 {
        return Err(Error::InvalidArgument("grid_n must be at least 1".into()));
    }
    let offsets = grid_offsets(image_size - patch_size, grid_n);
    Ok(offsets
        .iter()
        .flat_map(|&y| {
            offsets
                .iter()
                .map(move |&x| Rect::new(x, y, patch_size, patch_size))
        })
        .collect())
}

fn grid_offsets(span: u32, grid_n: u32) -> Vec<u32> {
    if grid_n == 1 {
        return vec![0];
    }
    let (span, steps) = (span as u64, (grid_n - 1) as u64);
    // round-half-up of i * span / steps in exact integer arithmetic
    (0..grid_n as u64)
        .map(|i| ((2 * i * span + steps) / (2 * steps)) as u32)
        .collect()
}

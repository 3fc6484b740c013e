//! Neighborhood-cube extraction.

use crate::data::cube::HsiCube;
use crate::error::{Error, Result};
use crate::model::SPATIAL_WINDOW;
use crate::tensor::Tensor;

/// The 3x3 spatial window of full spectra centered on (x, y), as a
/// `[3, 3, bands]` tensor. Neighbors that fall outside the scene are
/// mirrored about the border (the missing column left of x = 0 reads
/// column 1, and so on), so border pixels keep a full window.
pub fn extract_patch(cube: &HsiCube, x: usize, y: usize) -> Result<Tensor<f32>> {
    if x >= cube.width() || y >= cube.height() {
        return Err(Error::Usage(format!(
            "patch center ({x}, {y}) outside the {}x{} scene",
            cube.width(),
            cube.height()
        )));
    }
    let bands = cube.bands();
    let mut data = Vec::with_capacity(SPATIAL_WINDOW * SPATIAL_WINDOW * bands);
    for dy in -1..=1isize {
        for dx in -1..=1isize {
            let sx = mirror(x as isize + dx, cube.width());
            let sy = mirror(y as isize + dy, cube.height());
            data.extend_from_slice(cube.spectrum(sx, sy));
        }
    }
    Tensor::new(vec![SPATIAL_WINDOW, SPATIAL_WINDOW, bands], data)
}

/// Copies a patch into a flat buffer (same layout as [`extract_patch`])
/// without allocating. Used by the batched training path.
pub(crate) fn extract_patch_into(cube: &HsiCube, x: usize, y: usize, out: &mut [f32]) {
    let bands = cube.bands();
    debug_assert_eq!(out.len(), SPATIAL_WINDOW * SPATIAL_WINDOW * bands);
    let mut offset = 0;
    for dy in -1..=1isize {
        for dx in -1..=1isize {
            let sx = mirror(x as isize + dx, cube.width());
            let sy = mirror(y as isize + dy, cube.height());
            out[offset..offset + bands].copy_from_slice(cube.spectrum(sx, sy));
            offset += bands;
        }
    }
}

fn mirror(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= len as isize {
            i = 2 * (len as isize - 1) - i;
        } else {
            return i as usize;
        }
    }
}

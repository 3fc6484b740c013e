//! Synthetic labeled scenes for dataset-free testing.
//!
//! Each class gets a smooth random spectral signature (a short sum of
//! sinusoids over the band axis); the scene is cut into horizontal stripes,
//! one contiguous region per class, and every pixel is its class signature
//! plus white Gaussian noise. Everything is a pure function of the seed.

use crate::data::cube::HsiCube;
use crate::data::labels::LabelRaster;
use crate::error::{Error, Result};
use crate::rng::{Pcg32, STREAM_SYNTH};

const HARMONICS: usize = 4;

/// Smooth per-class signatures, seeded. Exposed so callers can plot what
/// the generator used.
pub fn class_signatures(n_classes: usize, bands: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Pcg32::new(seed, STREAM_SYNTH);
    (0..n_classes)
        .map(|_| {
            let terms: Vec<(f64, f64, f64)> = (0..HARMONICS)
                .map(|_| {
                    (
                        rng.range_f64(0.5, 1.5),            // amplitude
                        (1 + rng.below(6)) as f64,          // whole-spectrum cycles
                        rng.range_f64(0.0, std::f64::consts::TAU), // phase
                    )
                })
                .collect();
            (0..bands)
                .map(|b| {
                    let t = b as f64 / bands as f64;
                    terms
                        .iter()
                        .map(|&(a, f, p)| a * (std::f64::consts::TAU * f * t + p).sin())
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Generates a scene and its ground truth. Raw labels are 1..=n_classes,
/// assigned in horizontal stripes, so every pixel is labeled.
pub fn synth_generate(
    n_classes: usize,
    bands: usize,
    width: usize,
    height: usize,
    noise_std: f64,
    seed: u64,
) -> Result<(HsiCube, LabelRaster)> {
    if n_classes < 2 {
        return Err(Error::Config(format!(
            "synthetic scene needs at least 2 classes, got {n_classes}"
        )));
    }
    if n_classes > 255 {
        return Err(Error::Config(format!(
            "at most 255 classes fit an 8-bit raster, got {n_classes}"
        )));
    }
    if width == 0 || height == 0 || bands == 0 {
        return Err(Error::Config(format!(
            "synthetic scene dimensions {width}x{height}x{bands} must be positive"
        )));
    }
    if height < n_classes {
        return Err(Error::Config(format!(
            "scene height {height} cannot hold {n_classes} class stripes"
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Config(format!("noise level {noise_std} is invalid")));
    }

    let signatures = class_signatures(n_classes, bands, seed);
    let mut rng = Pcg32::new(seed ^ 0x6e6f697365, STREAM_SYNTH);
    let mut values = Vec::with_capacity(width * height * bands);
    let mut labels = Vec::with_capacity(width * height);
    for y in 0..height {
        let class = (y * n_classes / height).min(n_classes - 1);
        for _x in 0..width {
            labels.push((class + 1) as u8);
            let sig = &signatures[class];
            for &s in sig {
                let noise = if noise_std > 0.0 {
                    noise_std * rng.gaussian()
                } else {
                    0.0
                };
                values.push((s + noise) as f32);
            }
        }
    }
    Ok((
        HsiCube::new(width, height, bands, values)?,
        LabelRaster::new(width, height, labels)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::samples::enumerate_samples;

    #[test]
    fn zero_noise_pixels_repeat_the_signature() {
        let (cube, labels) = synth_generate(3, 8, 6, 6, 0.0, 9).unwrap();
        for y in 0..6 {
            for x in 1..6 {
                assert_eq!(labels.label(x, y), labels.label(0, y));
                assert_eq!(cube.spectrum(x, y), cube.spectrum(0, y));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_generate(4, 16, 10, 10, 0.2, 5).unwrap();
        let b = synth_generate(4, 16, 10, 10, 0.2, 5).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn full_scene_is_labeled_with_all_classes() {
        let (_, labels) = synth_generate(8, 4, 64, 64, 0.1, 1).unwrap();
        let set = enumerate_samples(&labels).unwrap();
        assert_eq!(set.len(), 64 * 64);
        assert_eq!(set.n_classes(), 8);
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(synth_generate(1, 8, 4, 4, 0.1, 1).is_err());
        assert!(synth_generate(4, 0, 4, 4, 0.1, 1).is_err());
        assert!(synth_generate(9, 8, 4, 4, 0.1, 1).is_err()); // height < classes
    }
}

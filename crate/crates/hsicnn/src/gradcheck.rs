//! Validates analytic gradients against central finite differences.
//!
//! Runs in f64; the relative error for each parameter is
//! `|a - n| / max(|a|, |n|, 1e-12)` and anything above the tolerance is
//! flagged.

use crate::error::Result;
use crate::model::{ArchConfig, GradientSet, Model};
use crate::rng::{Pcg32, STREAM_CHECK};
use crate::tensor::Tensor;

const REL_FLOOR: f64 = 1e-12;

/// Worst-case result for one layer's parameters.
#[derive(Clone, Debug)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub params: usize,
    pub max_rel_err: f64,
    /// Flat index (weights first, then biases) of the worst parameter.
    pub worst_index: usize,
    pub flagged: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub layers: Vec<LayerCheck>,
    pub max_rel_err: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.flagged == 0)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for l in &self.layers {
            out.push_str(&format!(
                "{:<7} {:>8} params  max rel err {:.3e}  flagged {}\n",
                l.layer, l.params, l.max_rel_err, l.flagged
            ));
        }
        out.push_str(&format!(
            "overall max rel err {:.3e} (tolerance {:.1e}): {}\n",
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Compares the model's analytic gradients on one sample against central
/// finite differences of the loss.
pub fn grad_check(
    model: &Model<f64>,
    patch: &Tensor<f64>,
    label: usize,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, cache) = model.forward(patch)?;
    let (grads, _) = model.backward(&cache, label, false)?;
    compare_with_numeric(model, patch, label, &grads, step, tolerance)
}

/// Same as [`grad_check`] but takes the analytic gradients from the caller,
/// so a deliberately corrupted gradient can be shown to get flagged.
pub fn compare_with_numeric(
    model: &Model<f64>,
    patch: &Tensor<f64>,
    label: usize,
    analytic: &GradientSet<f64>,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut scratch = model.clone();
    let mut layers = Vec::with_capacity(5);
    let mut overall: f64 = 0.0;

    for (layer_idx, (name, params)) in model.layers().into_iter().enumerate() {
        let weight_count = params.weights.len();
        let total = params.param_count();
        let (_, grad_layer) = analytic.layers()[layer_idx];
        let mut max_rel: f64 = 0.0;
        let mut worst_index = 0;
        let mut flagged = 0;

        for flat in 0..total {
            let analytic_value = if flat < weight_count {
                grad_layer.weights.data()[flat]
            } else {
                grad_layer.biases.data()[flat - weight_count]
            };
            let numeric = {
                let nudge = |m: &mut Model<f64>, delta: f64| {
                    let layer = m.layer_mut(layer_idx);
                    let slot = if flat < weight_count {
                        &mut layer.weights.data_mut()[flat]
                    } else {
                        &mut layer.biases.data_mut()[flat - weight_count]
                    };
                    *slot += delta;
                };
                nudge(&mut scratch, step);
                let up = scratch.loss(patch, label)?;
                nudge(&mut scratch, -2.0 * step);
                let down = scratch.loss(patch, label)?;
                nudge(&mut scratch, step);
                (up - down) / (2.0 * step)
            };
            let rel = (analytic_value - numeric).abs()
                / analytic_value.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > max_rel {
                max_rel = rel;
                worst_index = flat;
            }
            if rel > tolerance {
                flagged += 1;
            }
        }

        overall = overall.max(max_rel);
        layers.push(LayerCheck {
            layer: name,
            params: total,
            max_rel_err: max_rel,
            worst_index,
            flagged,
        });
    }

    Ok(GradCheckReport {
        layers,
        max_rel_err: overall,
        step,
        tolerance,
    })
}

/// The small architecture used for routine derivative verification: big
/// enough to exercise every layer type, small enough to difference every
/// parameter in milliseconds.
pub fn check_config() -> ArchConfig {
    ArchConfig {
        bands: 10,
        classes: 3,
        conv1_kernel_depth: 4,
        conv1_stride: 2,
        conv1_kernels: 4,
        conv2_kernels: 2,
        conv2_stride: 1,
        pool_window: 2,
        pool_stride: 2,
        fc1_nodes: 8,
        fc2_nodes: 6,
    }
}

/// Builds a seeded random model and sample on [`check_config`] and runs the
/// checker with the given step and tolerance.
pub fn run_seeded_check(seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let config = check_config();
    let model = Model::<f64>::build_uniform(config.clone(), 0.5, seed)?;
    let mut rng = Pcg32::new(seed, STREAM_CHECK);
    let patch = Tensor::new(
        vec![3, 3, config.bands],
        (0..9 * config.bands)
            .map(|_| rng.range_f64(-1.0, 1.0))
            .collect(),
    )?;
    let label = rng.below(config.classes);
    grad_check(&model, &patch, label, step, tolerance)
}

//! Browser playground for the spectral-spatial classifier.
//!
//! Three interactive surfaces, all returning plain data so the page needs
//! no framework: a layer-shape explorer, per-class spectra of a synthetic
//! scene, and a live training loop with classification-map rendering. The
//! page draws RGBA buffers onto canvases; JSON goes into tables and charts.

use wasm_bindgen::prelude::*;

use hsicnn::data::{
    class_signatures, enumerate_samples, normalize_cube, stratified_split, synth_generate,
    HsiCube, LabelRaster, SampleSet, SplitIndices,
};
use hsicnn::eval::{
    average_accuracy, confusion_matrix, overall_accuracy, render_ground_truth, render_map,
    MapMode,
};
use hsicnn::image::RgbImage;
use hsicnn::model::{ArchConfig, Model};
use hsicnn::train::{Trainer, TrainConfig};

/// Derived layer dimensions for a hyperparameter choice, as a JSON array of
/// `{stage, shape, detail}` rows (or `{error}` when the stack degenerates).
#[wasm_bindgen]
pub fn layer_shape_table(
    bands: usize,
    kernel_depth: usize,
    conv1_stride: usize,
    conv1_kernels: usize,
    conv2_stride: usize,
    classes: usize,
) -> String {
    let config = ArchConfig {
        conv1_kernel_depth: kernel_depth,
        conv1_stride,
        conv1_kernels,
        conv2_stride,
        ..ArchConfig::new(bands, classes)
    };
    match config.derive_shapes() {
        Err(err) => format!("{{\"error\":{}}}", json_str(&err.to_string())),
        Ok(s) => {
            let params = config.param_count().unwrap_or(0);
            let rows = [
                ("input", format!("3 x 3 x {bands}"), "neighborhood cube".to_string()),
                (
                    "conv1",
                    format!("{} x {}", conv1_kernels, s.conv1_len),
                    format!("{conv1_kernels} spectral kernels, depth {kernel_depth}, stride {conv1_stride}"),
                ),
                (
                    "stack",
                    format!("{} x {}", s.reshape_rows, s.reshape_cols),
                    "feature vectors stacked as matrix columns".to_string(),
                ),
                (
                    "conv2",
                    format!("{} x {} x {}", s.conv2_h, s.conv2_w, s.conv2_channels),
                    format!("3 x 3 kernels, stride {conv2_stride}"),
                ),
                (
                    "pool",
                    format!("{} x {} x {}", s.pool_h, s.pool_w, s.conv2_channels),
                    "2 x 2 max pooling".to_string(),
                ),
                ("flatten", format!("{}", s.flatten_len), "row-major".to_string()),
                ("fc1", format!("{}", s.fc1_nodes), "ReLU".to_string()),
                ("fc2", format!("{}", s.fc2_nodes), "ReLU".to_string()),
                ("softmax", format!("{classes}"), format!("{params} trainable parameters")),
            ];
            let body: Vec<String> = rows
                .iter()
                .map(|(stage, shape, detail)| {
                    format!(
                        "{{\"stage\":{},\"shape\":{},\"detail\":{}}}",
                        json_str(stage),
                        json_str(shape),
                        json_str(detail)
                    )
                })
                .collect();
            format!("[{}]", body.join(","))
        }
    }
}

/// A synthetic scene with a model training on it, stepped from the page.
#[wasm_bindgen]
pub struct ScenePlayground {
    raw_cube: HsiCube,
    cube: HsiCube,
    labels: LabelRaster,
    samples: SampleSet,
    split: SplitIndices,
    model: Model<f32>,
    trainer: Trainer,
    config: TrainConfig,
    classes: usize,
    seed: u64,
}

/// Browser-sized architecture: the same stack shape at a fraction of the
/// benchmark widths so a training step takes milliseconds.
fn playground_arch(bands: usize, classes: usize) -> ArchConfig {
    ArchConfig {
        conv1_kernel_depth: (bands / 4).clamp(2, 16),
        conv1_stride: (bands / 16).max(1),
        conv1_kernels: 12,
        conv2_kernels: 16,
        conv2_stride: 1,
        pool_window: 2,
        pool_stride: 2,
        fc1_nodes: 96,
        fc2_nodes: 48,
        ..ArchConfig::new(bands, classes)
    }
}

#[wasm_bindgen]
impl ScenePlayground {
    /// Generates and normalizes a scene, splits it 80/20, and builds a
    /// fresh model.
    #[wasm_bindgen(constructor)]
    pub fn new(
        classes: usize,
        bands: usize,
        size: usize,
        noise_std: f64,
        seed: u64,
    ) -> Result<ScenePlayground, JsValue> {
        let build = || -> hsicnn::Result<ScenePlayground> {
            let (raw_cube, labels) = synth_generate(classes, bands, size, size, noise_std, seed)?;
            let (cube, _) = normalize_cube(&raw_cube);
            let samples = enumerate_samples(&labels)?;
            let split = stratified_split(&samples, 0.8, seed)?;
            let model = Model::build(playground_arch(bands, classes), seed)?;
            let config = TrainConfig {
                learning_rate: 0.03,
                batch_size: 16,
                max_iterations: u64::MAX,
                seed,
                eval_every: 0,
                ..TrainConfig::default()
            };
            let trainer = Trainer::new(&model, &config)?;
            Ok(ScenePlayground {
                raw_cube,
                cube,
                labels,
                samples,
                split,
                model,
                trainer,
                config,
                classes,
                seed,
            })
        };
        build().map_err(|e| JsValue::from_str(&e.to_string()))
    }

    pub fn width(&self) -> usize {
        self.cube.width()
    }

    pub fn height(&self) -> usize {
        self.cube.height()
    }

    pub fn iteration(&self) -> u64 {
        self.trainer.iteration
    }

    /// Ground-truth map as RGBA bytes.
    pub fn ground_truth_rgba(&self) -> Vec<u8> {
        rgba(&render_ground_truth(&self.labels))
    }

    /// Mean spectra of each class on the raw (un-normalized) scene plus
    /// the generator's signatures, as JSON.
    pub fn class_spectra_json(&self) -> String {
        let bands = self.raw_cube.bands();
        let mut sums = vec![vec![0.0f64; bands]; self.classes];
        let mut counts = vec![0usize; self.classes];
        for rec in self.samples.records() {
            counts[rec.class] += 1;
            let spectrum = self.raw_cube.spectrum(rec.x, rec.y);
            for (acc, &v) in sums[rec.class].iter_mut().zip(spectrum) {
                *acc += v as f64;
            }
        }
        let signatures = class_signatures(self.classes, bands, self.seed);
        let entries: Vec<String> = (0..self.classes)
            .map(|c| {
                let mean: Vec<String> = sums[c]
                    .iter()
                    .map(|s| trim_float(s / counts[c].max(1) as f64))
                    .collect();
                let sig: Vec<String> = signatures[c].iter().map(|&v| trim_float(v)).collect();
                format!(
                    "{{\"class\":{},\"mean\":[{}],\"signature\":[{}]}}",
                    c + 1,
                    mean.join(","),
                    sig.join(",")
                )
            })
            .collect();
        format!("[{}]", entries.join(","))
    }

    /// Runs `steps` training iterations and reports progress as JSON:
    /// iteration, epoch, mean batch loss, and split accuracies.
    pub fn train_steps(&mut self, steps: u32) -> Result<String, JsValue> {
        let mut loss_sum = 0.0f64;
        for _ in 0..steps {
            let loss = self
                .trainer
                .step(&mut self.model, &self.cube, &self.samples, &self.split.train)
                .map_err(|e| JsValue::from_str(&e.to_string()))?;
            loss_sum += loss as f64;
        }
        let loss = if steps > 0 { loss_sum / steps as f64 } else { 0.0 };
        // Accuracies on bounded stride-subsamples so a step stays frame-rate
        // sized even on large scenes.
        let accuracy = |indices: &[usize]| -> Result<(f64, f64), JsValue> {
            const CAP: usize = 320;
            let stride = indices.len().div_ceil(CAP).max(1);
            let subset: Vec<usize> = indices.iter().copied().step_by(stride).collect();
            let records = self.samples.select(&subset);
            let cm = confusion_matrix(&self.model, &self.cube, &records, self.classes, 1)
                .map_err(|e| JsValue::from_str(&e.to_string()))?;
            Ok((
                overall_accuracy(&cm).unwrap_or(0.0),
                average_accuracy(&cm).unwrap_or(0.0),
            ))
        };
        let (train_acc, _) = accuracy(&self.split.train)?;
        let (test_acc, test_aa) = accuracy(&self.split.test)?;
        Ok(format!(
            "{{\"iteration\":{},\"epoch\":{},\"loss\":{},\"train_acc\":{},\"test_acc\":{},\"test_aa\":{}}}",
            self.trainer.iteration,
            self.trainer.epoch(),
            trim_float(loss),
            trim_float(train_acc),
            trim_float(test_acc),
            trim_float(test_aa)
        ))
    }

    /// Classification map of the current model as RGBA bytes.
    pub fn prediction_rgba(&mut self, labeled_only: bool) -> Result<Vec<u8>, JsValue> {
        let mode = if labeled_only {
            MapMode::LabeledOnly
        } else {
            MapMode::Full
        };
        render_map(&self.model, &self.cube, &self.labels, mode, 1)
            .map(|img| rgba(&img))
            .map_err(|e| JsValue::from_str(&e.to_string()))
    }

    /// Rebuilds the model and trainer, keeping the scene.
    pub fn reset(&mut self, seed: u64) -> Result<(), JsValue> {
        let rebuild = || -> hsicnn::Result<(Model<f32>, Trainer)> {
            let model = Model::build(
                playground_arch(self.cube.bands(), self.classes),
                seed,
            )?;
            let config = TrainConfig {
                seed,
                ..self.config.clone()
            };
            let trainer = Trainer::new(&model, &config)?;
            Ok((model, trainer))
        };
        let (model, trainer) = rebuild().map_err(|e| JsValue::from_str(&e.to_string()))?;
        self.model = model;
        self.trainer = trainer;
        self.config.seed = seed;
        self.seed = seed;
        Ok(())
    }
}

fn rgba(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.width() * img.height() * 4);
    for chunk in img.pixels().chunks_exact(3) {
        out.extend_from_slice(chunk);
        out.push(255);
    }
    out
}

fn json_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn trim_float(v: f64) -> String {
    if v.is_finite() {
        format!("{:.6}", v)
    } else {
        "null".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_table_lists_the_benchmark_chain() {
        let json = layer_shape_table(176, 24, 9, 30, 1, 13);
        assert!(json.contains("\"30 x 17\""), "{json}");
        assert!(json.contains("\"17 x 30\""), "{json}");
        assert!(json.contains("\"15 x 28 x 64\""), "{json}");
        assert!(json.contains("\"7 x 14 x 64\""), "{json}");
        assert!(json.contains("\"6272\""), "{json}");
    }

    #[test]
    fn shape_table_reports_degenerate_configs() {
        let json = layer_shape_table(16, 24, 9, 30, 1, 4);
        assert!(json.starts_with("{\"error\":"), "{json}");
    }

    #[test]
    fn playground_trains_and_renders() {
        let mut pg = ScenePlayground::new(4, 32, 24, 0.1, 3).unwrap();
        assert_eq!(pg.width(), 24);
        let gt = pg.ground_truth_rgba();
        assert_eq!(gt.len(), 24 * 24 * 4);

        let stats = pg.train_steps(30).unwrap();
        assert!(stats.contains("\"iteration\":30"), "{stats}");
        let map = pg.prediction_rgba(false).unwrap();
        assert_eq!(map.len(), 24 * 24 * 4);

        let spectra = pg.class_spectra_json();
        assert!(spectra.contains("\"class\":4"), "{spectra}");

        pg.reset(9).unwrap();
        assert_eq!(pg.iteration(), 0);
    }
}

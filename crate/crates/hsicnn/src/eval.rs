//! Confusion-matrix metrics, classification-map rendering, and feature
//! export.

use std::path::Path;

use crate::batch::BatchPredictor;
use crate::data::cube::HsiCube;
use crate::data::labels::LabelRaster;
use crate::data::patch::extract_patch;
use crate::data::samples::{enumerate_samples, Sample, SampleSet};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::model::Model;

/// Square count matrix: rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.count(i, i)).sum()
    }
}

/// Runs the model over the records and tallies true vs predicted classes.
pub fn confusion_matrix(
    model: &Model<f32>,
    cube: &HsiCube,
    records: &[Sample],
    classes: usize,
    threads: usize,
) -> Result<ConfusionMatrix> {
    if cube.bands() != model.config().bands {
        return Err(Error::Dimension(format!(
            "cube has {} bands, model expects {}",
            cube.bands(),
            model.config().bands
        )));
    }
    let predictions = predict_records(model, cube, records, threads);
    let mut cm = ConfusionMatrix::new(classes);
    for (rec, &pred) in records.iter().zip(&predictions) {
        if rec.class >= classes || pred >= classes {
            return Err(Error::Data(format!(
                "class index out of range: true {} / predicted {pred} with {classes} classes",
                rec.class
            )));
        }
        cm.record(rec.class, pred);
    }
    Ok(cm)
}

fn predict_records(
    model: &Model<f32>,
    cube: &HsiCube,
    records: &[Sample],
    threads: usize,
) -> Vec<usize> {
    let threads = threads.max(1);
    if threads == 1 || records.len() < 2 * threads {
        return BatchPredictor::new(model).predict(model, cube, records);
    }
    // Disjoint contiguous spans, stitched back in order.
    let chunk_len = records.len().div_ceil(threads);
    let mut out = vec![0usize; records.len()];
    std::thread::scope(|scope| {
        for (chunk, slot) in records.chunks(chunk_len).zip(out.chunks_mut(chunk_len)) {
            scope.spawn(move || {
                let predictions = BatchPredictor::new(model).predict(model, cube, chunk);
                slot.copy_from_slice(&predictions);
            });
        }
    });
    out
}

/// Fraction of evaluated samples on the diagonal.
pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Usage(
            "overall accuracy of an empty confusion matrix".into(),
        ));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Unweighted mean of per-class recalls.
pub fn average_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let mut sum = 0.0;
    for truth in 0..cm.classes() {
        let row = cm.row_total(truth);
        if row == 0 {
            return Err(Error::Usage(format!(
                "class {truth} has no evaluated samples"
            )));
        }
        sum += cm.count(truth, truth) as f64 / row as f64;
    }
    Ok(sum / cm.classes() as f64)
}

/// Per-class recall plus the two aggregate accuracies.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    /// (raw label, evaluated count, recall) per class.
    pub per_class: Vec<(u8, u64, f64)>,
    pub total: u64,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix, samples: &SampleSet) -> Result<Self> {
        let per_class = (0..cm.classes())
            .map(|c| {
                let row = cm.row_total(c);
                let recall = if row == 0 {
                    0.0
                } else {
                    cm.count(c, c) as f64 / row as f64
                };
                (samples.raw_label(c), row, recall)
            })
            .collect();
        Ok(MetricsReport {
            overall_accuracy: overall_accuracy(cm)?,
            average_accuracy: average_accuracy(cm)?,
            per_class,
            total: cm.total(),
        })
    }

    /// Plain-text table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("class  samples  recall\n");
        for &(raw, count, recall) in &self.per_class {
            out.push_str(&format!("{raw:>5}  {count:>7}  {recall:.4}\n"));
        }
        out.push_str(&format!(
            "overall accuracy (OA) {:.4} over {} samples\n",
            self.overall_accuracy, self.total
        ));
        out.push_str(&format!(
            "average accuracy (AA) {:.4}\n",
            self.average_accuracy
        ));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,samples,recall\n");
        for &(raw, count, recall) in &self.per_class {
            out.push_str(&format!("{raw},{count},{recall}\n"));
        }
        out.push_str(&format!("OA,{},{}\n", self.total, self.overall_accuracy));
        out.push_str(&format!("AA,{},{}\n", self.total, self.average_accuracy));
        out
    }
}

/// Sixteen well-separated colors; raw class labels map onto it cyclically
/// and raw label 0 (unlabeled) is black.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],   // red
    [60, 180, 75],   // green
    [255, 225, 25],  // yellow
    [67, 99, 216],   // blue
    [245, 130, 48],  // orange
    [145, 30, 180],  // purple
    [70, 240, 240],  // cyan
    [240, 50, 230],  // magenta
    [188, 246, 12],  // lime
    [250, 190, 190], // pink
    [0, 128, 128],   // teal
    [230, 190, 255], // lavender
    [154, 99, 36],   // brown
    [255, 250, 200], // beige
    [128, 0, 0],     // maroon
    [170, 255, 195], // mint
];

pub fn class_color(raw_label: u8) -> [u8; 3] {
    if raw_label == 0 {
        [0, 0, 0]
    } else {
        PALETTE[(raw_label as usize - 1) % PALETTE.len()]
    }
}

/// Which pixels a classification map predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapMode {
    /// Every pixel of the scene.
    Full,
    /// Only pixels with a nonzero ground-truth label; the rest stay black.
    LabeledOnly,
}

impl std::str::FromStr for MapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(MapMode::Full),
            "labeled-only" => Ok(MapMode::LabeledOnly),
            other => Err(Error::Usage(format!(
                "unknown map mode '{other}' (expected full or labeled-only)"
            ))),
        }
    }
}

/// Colors the ground-truth raster directly.
pub fn render_ground_truth(labels: &LabelRaster) -> RgbImage {
    let mut img = RgbImage::filled(labels.width(), labels.height(), [0, 0, 0]);
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            img.set(x, y, class_color(labels.label(x, y)));
        }
    }
    img
}

/// Predicts pixels of the scene and colors them with the class palette.
/// Predicted class indices are translated back to raw labels through the
/// raster's own label mapping, so prediction maps and ground-truth maps
/// share colors.
pub fn render_map(
    model: &Model<f32>,
    cube: &HsiCube,
    labels: &LabelRaster,
    mode: MapMode,
    threads: usize,
) -> Result<RgbImage> {
    if cube.width() != labels.width() || cube.height() != labels.height() {
        return Err(Error::Dimension(format!(
            "cube is {}x{}, labels are {}x{}",
            cube.width(),
            cube.height(),
            labels.width(),
            labels.height()
        )));
    }
    if cube.bands() != model.config().bands {
        return Err(Error::Dimension(format!(
            "cube has {} bands, model expects {}",
            cube.bands(),
            model.config().bands
        )));
    }
    let samples = enumerate_samples(labels)?;
    let targets: Vec<Sample> = match mode {
        MapMode::LabeledOnly => samples.records().to_vec(),
        MapMode::Full => {
            let mut all = Vec::with_capacity(cube.width() * cube.height());
            for y in 0..cube.height() {
                for x in 0..cube.width() {
                    all.push(Sample { x, y, class: 0 });
                }
            }
            all
        }
    };
    let predictions = predict_records(model, cube, &targets, threads);
    let mut img = RgbImage::filled(cube.width(), cube.height(), [0, 0, 0]);
    for (target, &pred) in targets.iter().zip(&predictions) {
        let raw = if pred < samples.n_classes() {
            samples.raw_label(pred)
        } else {
            0
        };
        img.set(target.x, target.y, class_color(raw));
    }
    Ok(img)
}

/// Post-activation layer whose values feed an external classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureLayer {
    Fc1,
    Fc2,
}

impl std::str::FromStr for FeatureLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc1" => Ok(FeatureLayer::Fc1),
            "fc2" => Ok(FeatureLayer::Fc2),
            other => Err(Error::Usage(format!(
                "unknown feature layer '{other}' (expected fc1 or fc2)"
            ))),
        }
    }
}

/// One row per exported sample.
#[derive(Clone, Debug)]
pub struct FeatureRow {
    /// Index into the sample set the caller selected from.
    pub sample: usize,
    pub class: usize,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct FeatureTable {
    pub layer: FeatureLayer,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn feature_count(&self) -> usize {
        self.rows.first().map_or(0, |r| r.values.len())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,class");
        for i in 0..self.feature_count() {
            out.push_str(&format!(",f{i}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{},{}", row.sample, row.class));
            for v in &row.values {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| crate::error::io_context(path, e))?;
        Ok(())
    }
}

/// Exports the chosen hidden layer's post-activation values for the
/// selected samples, exactly as the forward pass cached them.
pub fn export_features(
    model: &Model<f32>,
    cube: &HsiCube,
    samples: &SampleSet,
    indices: &[usize],
    layer: FeatureLayer,
) -> Result<FeatureTable> {
    if cube.bands() != model.config().bands {
        return Err(Error::Dimension(format!(
            "cube has {} bands, model expects {}",
            cube.bands(),
            model.config().bands
        )));
    }
    let mut rows = Vec::with_capacity(indices.len());
    for &idx in indices {
        let rec = *samples.records().get(idx).ok_or_else(|| {
            Error::Usage(format!(
                "sample index {idx} out of range ({} samples)",
                samples.len()
            ))
        })?;
        let patch = extract_patch(cube, rec.x, rec.y)?;
        let (_, cache) = model.forward(&patch)?;
        let values = match layer {
            FeatureLayer::Fc1 => cache.fc1_post.data().to_vec(),
            FeatureLayer::Fc2 => cache.fc2_post.data().to_vec(),
        };
        rows.push(FeatureRow {
            sample: idx,
            class: rec.class,
            values,
        });
    }
    Ok(FeatureTable { layer, rows })
}

//! Mini-batch SGD training with an inverse-time learning-rate schedule.
//!
//! Each epoch is one full pass over a fresh seeded shuffle of the training
//! indices; iterations consume consecutive batch-sized windows of it (the
//! final batch of an epoch may be short). Per-sample gradients are averaged
//! over the batch, so the learning rate means the same thing at any batch
//! size. Plain SGD: no momentum, no weight decay.

use std::path::Path;

use crate::batch::Workspace;
use crate::checkpoint::save_checkpoint;
use crate::data::cube::HsiCube;
use crate::data::samples::{Sample, SampleSet, SplitIndices};
use crate::error::{Error, Result};
use crate::model::{GradientSet, Model};
use crate::rng::{Pcg32, STREAM_SHUFFLE};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Inverse-time decay coefficient: lr(epoch) = lr / (1 + decay * epoch).
    pub decay: f64,
    pub batch_size: usize,
    pub max_iterations: u64,
    pub seed: u64,
    /// Record a history point every this many iterations (0 = only the
    /// initial and final points).
    pub eval_every: u64,
    /// Save the checkpoint every this many iterations (0 = never mid-run).
    pub checkpoint_every: u64,
    /// Worker threads for the per-batch fan-out. Results are deterministic
    /// for a fixed thread count; the contract of byte-identical reruns is
    /// stated for 1.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            decay: 0.09,
            batch_size: 100,
            max_iterations: 7500,
            seed: 0,
            eval_every: 100,
            checkpoint_every: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::Config(format!(
                "decay {} must be non-negative",
                self.decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("iteration budget must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("thread count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate at an epoch under the inverse-time schedule.
pub fn lr_at(config: &TrainConfig, epoch: u64) -> f64 {
    config.learning_rate / (1.0 + config.decay * epoch as f64)
}

/// One plain SGD step: `w <- w - lr * g` elementwise.
pub fn sgd_update(model: &mut Model<f32>, grads: &GradientSet<f32>, lr: f64) -> Result<()> {
    let lr = lr as f32;
    for ((name, params), (_, g)) in model.layers_mut().into_iter().zip(grads.layers()) {
        if !params.shape_congruent(g) {
            return Err(Error::Usage(format!(
                "gradient for layer {name} does not match its parameter shapes"
            )));
        }
        for (w, &gv) in params.weights.data_mut().iter_mut().zip(g.weights.data()) {
            *w -= lr * gv;
        }
        for (b, &gv) in params.biases.data_mut().iter_mut().zip(g.biases.data()) {
            *b -= lr * gv;
        }
    }
    Ok(())
}

/// One record per evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryPoint {
    pub iteration: u64,
    /// Mean per-sample training loss over the window since the previous
    /// point (for the initial point: the loss of the evaluation subset).
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub points: Vec<HistoryPoint>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,train_acc,test_acc\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.iteration, p.loss, p.train_acc, p.test_acc
            ));
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| crate::error::io_context(path, e))?;
        Ok(())
    }
}

/// Stepwise trainer. Holds the shuffle state and scratch buffers but no
/// borrows, so callers drive it one iteration at a time.
pub struct Trainer {
    config: TrainConfig,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    rng: Pcg32,
    pub iteration: u64,
    workspaces: Vec<Workspace>,
    chunk_grads: Vec<GradientSet<f32>>,
    batch: Vec<Sample>,
}

impl Trainer {
    pub fn new(model: &Model<f32>, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let threads = config.threads;
        let chunk_cap = config.batch_size.div_ceil(threads);
        Ok(Trainer {
            config: config.clone(),
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            rng: Pcg32::new(config.seed, STREAM_SHUFFLE),
            iteration: 0,
            workspaces: (0..threads).map(|_| Workspace::new(model, chunk_cap)).collect(),
            chunk_grads: (0..threads).map(|_| GradientSet::zeros_like(model)).collect(),
            batch: Vec::with_capacity(config.batch_size),
        })
    }

    /// Epoch index the next step will run in.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Runs one iteration: draws the next batch from the per-epoch shuffle,
    /// averages the per-sample gradients, and applies one SGD step at the
    /// current epoch's learning rate. Returns the mean batch loss.
    pub fn step(
        &mut self,
        model: &mut Model<f32>,
        cube: &HsiCube,
        samples: &SampleSet,
        train_indices: &[usize],
    ) -> Result<f32> {
        if train_indices.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if cube.bands() != model.config().bands {
            return Err(Error::Dimension(format!(
                "cube has {} bands, model expects {}",
                cube.bands(),
                model.config().bands
            )));
        }

        if self.cursor >= self.order.len() {
            if !self.order.is_empty() {
                self.epoch += 1;
            }
            self.order = train_indices.to_vec();
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let end = (self.cursor + self.config.batch_size).min(self.order.len());
        self.batch.clear();
        for &idx in &self.order[self.cursor..end] {
            self.batch.push(samples.records()[idx]);
        }
        self.cursor = end;

        let n = self.batch.len();
        let inv_batch = 1.0 / n as f32;
        for g in &mut self.chunk_grads {
            for (_, layer) in g.layers_mut() {
                layer.weights.data_mut().fill(0.0);
                layer.biases.data_mut().fill(0.0);
            }
        }

        let threads = self.workspaces.len();
        let loss_sum: f64;
        if threads == 1 {
            let ws = &mut self.workspaces[0];
            ws.forward_chunk(model, cube, &self.batch);
            loss_sum = ws.backward_chunk(model, &self.batch, inv_batch, &mut self.chunk_grads[0]);
        } else {
            // Contiguous chunks, reduced in chunk order below, so a fixed
            // thread count gives a fixed result.
            let chunk_len = n.div_ceil(threads);
            let chunks: Vec<&[Sample]> = self.batch.chunks(chunk_len).collect();
            let mut losses = vec![0.0f64; chunks.len()];
            let model_ref: &Model<f32> = model;
            std::thread::scope(|scope| {
                for ((ws, grads), (chunk, loss_out)) in self
                    .workspaces
                    .iter_mut()
                    .zip(&mut self.chunk_grads)
                    .zip(chunks.into_iter().zip(&mut losses))
                {
                    scope.spawn(move || {
                        ws.forward_chunk(model_ref, cube, chunk);
                        *loss_out = ws.backward_chunk(model_ref, chunk, inv_batch, grads);
                    });
                }
            });
            loss_sum = losses.iter().sum();
        }

        // Fold the extra chunks into the first gradient set, in order.
        let (first, rest) = self.chunk_grads.split_first_mut().expect("one chunk");
        for g in rest.iter() {
            first.add_assign(g);
        }

        let lr = lr_at(&self.config, self.epoch);
        sgd_update(model, first, lr)?;
        self.iteration += 1;
        model.iteration += 1;
        Ok((loss_sum / n as f64) as f32)
    }
}

/// Bounded deterministic subsample used for the accuracy columns of the
/// history: up to 512 indices at a fixed stride.
fn eval_subset(indices: &[usize]) -> Vec<usize> {
    const CAP: usize = 512;
    if indices.len() <= CAP {
        return indices.to_vec();
    }
    let stride = indices.len().div_ceil(CAP);
    indices.iter().copied().step_by(stride).collect()
}

fn accuracy(predictions: &[usize], records: &[Sample]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let correct = predictions
        .iter()
        .zip(records)
        .filter(|(p, r)| **p == r.class)
        .count();
    correct as f64 / records.len() as f64
}

/// Trains for the configured iteration budget, recording history and
/// optionally checkpointing along the way. The model is consumed and
/// returned so half-trained state never escapes on error.
pub fn train(
    mut model: Model<f32>,
    cube: &HsiCube,
    samples: &SampleSet,
    split: &SplitIndices,
    config: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<(Model<f32>, TrainHistory)> {
    config.validate()?;
    split.validate(samples)?;
    if split.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if cube.bands() != model.config().bands {
        return Err(Error::Dimension(format!(
            "cube has {} bands, model expects {}",
            cube.bands(),
            model.config().bands
        )));
    }
    if samples.n_classes() > model.config().classes {
        return Err(Error::Config(format!(
            "sample set has {} classes, model emits {}",
            samples.n_classes(),
            model.config().classes
        )));
    }

    let train_eval = samples.select(&eval_subset(&split.train));
    let test_eval = samples.select(&eval_subset(&split.test));
    let mut predictor = crate::batch::BatchPredictor::new(&model);
    let mut history = TrainHistory::default();

    // Initial point: evaluation loss and accuracies before any update.
    {
        let (train_pred, loss) = predictor.predict_with_loss(&model, cube, &train_eval);
        let test_pred = predictor.predict(&model, cube, &test_eval);
        history.points.push(HistoryPoint {
            iteration: 0,
            loss,
            train_acc: accuracy(&train_pred, &train_eval),
            test_acc: accuracy(&test_pred, &test_eval),
        });
    }

    let mut trainer = Trainer::new(&model, config)?;
    let mut window_loss = 0.0f64;
    let mut window_len = 0u64;
    for _ in 0..config.max_iterations {
        let loss = trainer.step(&mut model, cube, samples, &split.train)?;
        window_loss += loss as f64;
        window_len += 1;

        let it = trainer.iteration;
        let record = (config.eval_every > 0 && it % config.eval_every == 0)
            || it == config.max_iterations;
        if record {
            let train_pred = predictor.predict(&model, cube, &train_eval);
            let test_pred = predictor.predict(&model, cube, &test_eval);
            history.points.push(HistoryPoint {
                iteration: it,
                loss: window_loss / window_len as f64,
                train_acc: accuracy(&train_pred, &train_eval),
                test_acc: accuracy(&test_pred, &test_eval),
            });
            window_loss = 0.0;
            window_len = 0;
        }
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 {
            if let Some(path) = checkpoint_path {
                save_checkpoint(&model, path)?;
            }
        }
    }

    if let Some(path) = checkpoint_path {
        save_checkpoint(&model, path)?;
    }
    Ok((model, history))
}

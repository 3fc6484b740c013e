//! The full network: configuration, derived layer shapes, parameter
//! initialization, end-to-end forward/backward, and prediction.
//!
//! The stack is fixed: spectral convolution over a 3x3-neighborhood cube,
//! stacking of the resulting feature vectors into a 2-D matrix, ReLU, a
//! 2-D convolution, ReLU, max pooling, then three fully connected layers
//! (ReLU after the first two) feeding a softmax output.

use crate::error::{Error, Result};
use crate::nn::{
    self, conv2d_backward, conv2d_forward, conv_spectral_backward, conv_spectral_forward,
    fc_backward, fc_forward, maxpool2d_backward, maxpool2d_forward, relu, relu_backward,
    reshape_stack, reshape_unstack, softmax, softmax_xent_grad, LayerParams,
};
use crate::rng::{Pcg32, STREAM_INIT};
use crate::tensor::{Scalar, Tensor};

/// Spatial window of the neighborhood cube (the center pixel plus its 8
/// neighbors) and of the 2-D convolution kernels.
pub const SPATIAL_WINDOW: usize = 3;

/// Architecture hyperparameters. Everything else about the network is
/// derived from these.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    /// Spectral band count of the input cube.
    pub bands: usize,
    /// Number of output classes.
    pub classes: usize,
    /// Band extent of each spectral-convolution kernel.
    pub conv1_kernel_depth: usize,
    /// Stride of the spectral convolution along the band axis.
    pub conv1_stride: usize,
    /// Number of spectral-convolution kernels (columns of the stacked matrix).
    pub conv1_kernels: usize,
    /// Number of 3x3 kernels in the 2-D convolution.
    pub conv2_kernels: usize,
    /// Stride of the 2-D convolution.
    pub conv2_stride: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub fc1_nodes: usize,
    pub fc2_nodes: usize,
}

impl ArchConfig {
    /// Baseline hyperparameters; named presets only change the kernel count.
    pub fn new(bands: usize, classes: usize) -> Self {
        ArchConfig {
            bands,
            classes,
            conv1_kernel_depth: 24,
            conv1_stride: 9,
            conv1_kernels: 30,
            conv2_kernels: 64,
            conv2_stride: 1,
            pool_window: 2,
            pool_stride: 2,
            fc1_nodes: 1024,
            fc2_nodes: 100,
        }
    }

    /// Named preset for one of the four benchmark scenes. A `-like` suffix
    /// is accepted so the same kernel counts can be applied to other data
    /// (for example a synthetic scene with a different class count).
    pub fn preset(name: &str, bands: usize, classes: usize) -> Result<Self> {
        let base = name.strip_suffix("-like").unwrap_or(name);
        let conv1_kernels = match base {
            "ksc" => 30,
            "ip" | "sa" => 60,
            "pu" => 90,
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset '{name}' (expected ksc, ip, pu, or sa)"
                )))
            }
        };
        Ok(ArchConfig {
            conv1_kernels,
            ..ArchConfig::new(bands, classes)
        })
    }

    /// Default band/class counts of the named benchmark scenes.
    pub fn preset_defaults(name: &str) -> Option<(usize, usize)> {
        match name.strip_suffix("-like").unwrap_or(name) {
            "ksc" => Some((176, 13)),
            "ip" => Some((200, 16)),
            "pu" => Some((103, 9)),
            "sa" => Some((204, 16)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv1_kernel_depth == 0 {
            return Err(Error::Config("conv1 kernel depth must be >= 1".into()));
        }
        if self.bands <= self.conv1_kernel_depth {
            return Err(Error::Config(format!(
                "band count {} must exceed the conv1 kernel depth {}",
                self.bands, self.conv1_kernel_depth
            )));
        }
        if self.conv1_stride == 0 || self.conv2_stride == 0 {
            return Err(Error::Config("strides must be >= 1".into()));
        }
        if self.conv1_kernels < SPATIAL_WINDOW {
            return Err(Error::Config(format!(
                "conv1 needs at least {SPATIAL_WINDOW} kernels so the stacked matrix fits a \
                 {SPATIAL_WINDOW}-wide 2-D kernel, got {}",
                self.conv1_kernels
            )));
        }
        if self.conv2_kernels == 0 {
            return Err(Error::Config("conv2 kernel count must be >= 1".into()));
        }
        if self.pool_window == 0 || self.pool_stride == 0 {
            return Err(Error::Config("pool window and stride must be >= 1".into()));
        }
        if self.fc1_nodes == 0 || self.fc2_nodes == 0 {
            return Err(Error::Config("fully connected layers need >= 1 node".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }

    /// Walks the stack computing every intermediate dimension with the
    /// valid-convolution rule `out = (in - kernel) / stride + 1`. Fails on
    /// the first stage whose output would be degenerate.
    pub fn derive_shapes(&self) -> Result<LayerShapes> {
        self.validate()?;
        let conv1_len = conv_out(self.bands, self.conv1_kernel_depth, self.conv1_stride)
            .ok_or_else(|| {
                Error::Config(format!(
                    "conv1: kernel depth {} does not fit {} bands",
                    self.conv1_kernel_depth, self.bands
                ))
            })?;

        let conv2_h = conv_out(conv1_len, SPATIAL_WINDOW, self.conv2_stride).ok_or_else(|| {
            Error::Config(format!(
                "conv2: stacked matrix height {conv1_len} is smaller than the \
                 {SPATIAL_WINDOW}x{SPATIAL_WINDOW} kernel"
            ))
        })?;
        let conv2_w =
            conv_out(self.conv1_kernels, SPATIAL_WINDOW, self.conv2_stride).ok_or_else(|| {
                Error::Config(format!(
                    "conv2: stacked matrix width {} is smaller than the \
                     {SPATIAL_WINDOW}x{SPATIAL_WINDOW} kernel",
                    self.conv1_kernels
                ))
            })?;

        let pool_h = conv_out(conv2_h, self.pool_window, self.pool_stride).ok_or_else(|| {
            Error::Config(format!(
                "pool: conv2 output height {conv2_h} is smaller than the pool window {}",
                self.pool_window
            ))
        })?;
        let pool_w = conv_out(conv2_w, self.pool_window, self.pool_stride).ok_or_else(|| {
            Error::Config(format!(
                "pool: conv2 output width {conv2_w} is smaller than the pool window {}",
                self.pool_window
            ))
        })?;

        Ok(LayerShapes {
            conv1_len,
            reshape_rows: conv1_len,
            reshape_cols: self.conv1_kernels,
            conv2_h,
            conv2_w,
            conv2_channels: self.conv2_kernels,
            pool_h,
            pool_w,
            flatten_len: pool_h * pool_w * self.conv2_kernels,
            fc1_nodes: self.fc1_nodes,
            fc2_nodes: self.fc2_nodes,
            classes: self.classes,
        })
    }

    /// Total trainable parameter count.
    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.derive_shapes()?;
        let window = SPATIAL_WINDOW * SPATIAL_WINDOW;
        let conv1 = self.conv1_kernels * (window * self.conv1_kernel_depth + 1);
        let conv2 = self.conv2_kernels * (window + 1);
        let fc1 = self.fc1_nodes * (shapes.flatten_len + 1);
        let fc2 = self.fc2_nodes * (self.fc1_nodes + 1);
        let out = self.classes * (self.fc2_nodes + 1);
        Ok(conv1 + conv2 + fc1 + fc2 + out)
    }
}

fn conv_out(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if input < kernel || kernel == 0 || stride == 0 {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

/// Every derived dimension of the stack, all guaranteed >= 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShapes {
    /// Feature-vector length produced by the spectral convolution.
    pub conv1_len: usize,
    pub reshape_rows: usize,
    pub reshape_cols: usize,
    pub conv2_h: usize,
    pub conv2_w: usize,
    pub conv2_channels: usize,
    pub pool_h: usize,
    pub pool_w: usize,
    pub flatten_len: usize,
    pub fc1_nodes: usize,
    pub fc2_nodes: usize,
    pub classes: usize,
}

/// Parameter gradients for every layer, shape-congruent with the model's
/// parameters.
#[derive(Clone, Debug)]
pub struct GradientSet<S: Scalar> {
    pub conv1: LayerParams<S>,
    pub conv2: LayerParams<S>,
    pub fc1: LayerParams<S>,
    pub fc2: LayerParams<S>,
    pub output: LayerParams<S>,
}

impl<S: Scalar> GradientSet<S> {
    pub fn zeros_like(model: &Model<S>) -> Self {
        GradientSet {
            conv1: model.conv1.zeros_like(),
            conv2: model.conv2.zeros_like(),
            fc1: model.fc1.zeros_like(),
            fc2: model.fc2.zeros_like(),
            output: model.output.zeros_like(),
        }
    }

    pub fn layers(&self) -> [(&'static str, &LayerParams<S>); 5] {
        [
            ("conv1", &self.conv1),
            ("conv2", &self.conv2),
            ("fc1", &self.fc1),
            ("fc2", &self.fc2),
            ("output", &self.output),
        ]
    }

    pub fn layers_mut(&mut self) -> [(&'static str, &mut LayerParams<S>); 5] {
        [
            ("conv1", &mut self.conv1),
            ("conv2", &mut self.conv2),
            ("fc1", &mut self.fc1),
            ("fc2", &mut self.fc2),
            ("output", &mut self.output),
        ]
    }

    pub fn scale(&mut self, factor: S) {
        for (_, layer) in self.layers_mut() {
            for v in layer.weights.data_mut() {
                *v *= factor;
            }
            for v in layer.biases.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet<S>) {
        for ((_, dst), (_, src)) in self.layers_mut().into_iter().zip(other.layers()) {
            for (d, s) in dst.weights.data_mut().iter_mut().zip(src.weights.data()) {
                *d += *s;
            }
            for (d, s) in dst.biases.data_mut().iter_mut().zip(src.biases.data()) {
                *d += *s;
            }
        }
    }
}

/// Everything the backward pass needs from a forward pass, plus the
/// activations downstream consumers read back (feature export).
#[derive(Clone, Debug)]
pub struct ForwardCache<S: Scalar> {
    pub patch: Tensor<S>,
    pub conv1_out: Tensor<S>,
    /// Stacked matrix before the activation.
    pub stacked: Tensor<S>,
    pub stacked_relu: Tensor<S>,
    pub conv2_out: Tensor<S>,
    pub conv2_relu: Tensor<S>,
    pub pool_out: Tensor<S>,
    pub pool_argmax: Vec<usize>,
    pub fc1_pre: Tensor<S>,
    pub fc1_post: Tensor<S>,
    pub fc2_pre: Tensor<S>,
    pub fc2_post: Tensor<S>,
    pub logits: Tensor<S>,
    pub probs: Tensor<S>,
}

/// The assembled network.
#[derive(Clone, Debug)]
pub struct Model<S: Scalar> {
    config: ArchConfig,
    shapes: LayerShapes,
    pub conv1: LayerParams<S>,
    pub conv2: LayerParams<S>,
    pub fc1: LayerParams<S>,
    pub fc2: LayerParams<S>,
    pub output: LayerParams<S>,
    /// Training iterations applied to these parameters.
    pub iteration: u64,
    /// Seed the parameters were initialized from.
    pub seed: u64,
}

impl<S: Scalar> Model<S> {
    /// Builds a model with He-uniform weights (bound sqrt(6 / fan_in)) for
    /// the convolutional and hidden fully connected layers, zero biases
    /// everywhere, and a zero-initialized output layer so a fresh model
    /// emits exactly uniform class probabilities.
    pub fn build(config: ArchConfig, seed: u64) -> Result<Self> {
        let mut model = Model::zeroed(config)?;
        model.seed = seed;
        let mut rng = Pcg32::new(seed, STREAM_INIT);
        let window = SPATIAL_WINDOW * SPATIAL_WINDOW;
        let layers: [(&mut LayerParams<S>, usize); 4] = [
            (&mut model.conv1, window * model.config.conv1_kernel_depth),
            (&mut model.conv2, window),
            (&mut model.fc1, model.shapes.flatten_len),
            (&mut model.fc2, model.shapes.fc1_nodes),
        ];
        for (layer, fan_in) in layers {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in layer.weights.data_mut() {
                *v = S::from_f64(rng.range_f64(-bound, bound));
            }
        }
        Ok(model)
    }

    /// All five layers uniform in `[-bound, bound]`, biases included. Used
    /// by the gradient checker, which needs nonzero derivatives everywhere.
    pub fn build_uniform(config: ArchConfig, bound: f64, seed: u64) -> Result<Self> {
        let mut model = Model::zeroed(config)?;
        model.seed = seed;
        let mut rng = Pcg32::new(seed, STREAM_INIT);
        for (_, layer) in model.layers_mut() {
            for v in layer.weights.data_mut() {
                *v = S::from_f64(rng.range_f64(-bound, bound));
            }
            for v in layer.biases.data_mut() {
                *v = S::from_f64(rng.range_f64(-bound, bound));
            }
        }
        Ok(model)
    }

    /// All parameters zero.
    pub fn zeroed(config: ArchConfig) -> Result<Self> {
        let shapes = config.derive_shapes()?;
        let w = SPATIAL_WINDOW;
        Ok(Model {
            conv1: LayerParams::zeros(
                vec![config.conv1_kernels, w, w, config.conv1_kernel_depth],
                config.conv1_kernels,
            ),
            conv2: LayerParams::zeros(vec![config.conv2_kernels, w, w], config.conv2_kernels),
            fc1: LayerParams::zeros(vec![config.fc1_nodes, shapes.flatten_len], config.fc1_nodes),
            fc2: LayerParams::zeros(vec![config.fc2_nodes, config.fc1_nodes], config.fc2_nodes),
            output: LayerParams::zeros(vec![config.classes, config.fc2_nodes], config.classes),
            iteration: 0,
            seed: 0,
            config,
            shapes,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn shapes(&self) -> &LayerShapes {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.param_count()).sum()
    }

    pub fn layers(&self) -> [(&'static str, &LayerParams<S>); 5] {
        [
            ("conv1", &self.conv1),
            ("conv2", &self.conv2),
            ("fc1", &self.fc1),
            ("fc2", &self.fc2),
            ("output", &self.output),
        ]
    }

    pub fn layers_mut(&mut self) -> [(&'static str, &mut LayerParams<S>); 5] {
        [
            ("conv1", &mut self.conv1),
            ("conv2", &mut self.conv2),
            ("fc1", &mut self.fc1),
            ("fc2", &mut self.fc2),
            ("output", &mut self.output),
        ]
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut LayerParams<S> {
        match index {
            0 => &mut self.conv1,
            1 => &mut self.conv2,
            2 => &mut self.fc1,
            3 => &mut self.fc2,
            4 => &mut self.output,
            _ => panic!("layer index {index} out of range"),
        }
    }

    pub fn convert<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            shapes: self.shapes.clone(),
            conv1: self.conv1.convert(),
            conv2: self.conv2.convert(),
            fc1: self.fc1.convert(),
            fc2: self.fc2.convert(),
            output: self.output.convert(),
            iteration: self.iteration,
            seed: self.seed,
        }
    }

    fn check_patch(&self, patch: &Tensor<S>) -> Result<()> {
        let want = [SPATIAL_WINDOW, SPATIAL_WINDOW, self.config.bands];
        if patch.shape() != want {
            return Err(Error::Dimension(format!(
                "patch shape {:?}, model expects {want:?}",
                patch.shape()
            )));
        }
        Ok(())
    }

    /// Runs the full stack on one neighborhood cube, returning class
    /// probabilities and every cached intermediate.
    pub fn forward(&self, patch: &Tensor<S>) -> Result<(Tensor<S>, ForwardCache<S>)> {
        self.check_patch(patch)?;
        let conv1_out = conv_spectral_forward(patch, &self.conv1, self.config.conv1_stride)?;
        let stacked = reshape_stack(&conv1_out)?;
        let stacked_relu = relu(&stacked);
        let conv2_out = conv2d_forward(&stacked_relu, &self.conv2, self.config.conv2_stride)?;
        let conv2_relu = relu(&conv2_out);
        let (pool_out, pool_argmax) =
            maxpool2d_forward(&conv2_relu, self.config.pool_window, self.config.pool_stride)?;
        let flat = pool_out.clone().reshaped(vec![self.shapes.flatten_len])?;
        let fc1_pre = fc_forward(&flat, &self.fc1)?;
        let fc1_post = relu(&fc1_pre);
        let fc2_pre = fc_forward(&fc1_post, &self.fc2)?;
        let fc2_post = relu(&fc2_pre);
        let logits = fc_forward(&fc2_post, &self.output)?;
        let probs = softmax(&logits);
        let cache = ForwardCache {
            patch: patch.clone(),
            conv1_out,
            stacked,
            stacked_relu,
            conv2_out,
            conv2_relu,
            pool_out,
            pool_argmax,
            fc1_pre,
            fc1_post,
            fc2_pre,
            fc2_post,
            probs: probs.clone(),
            logits,
        };
        Ok((probs, cache))
    }

    /// Cross-entropy loss of one labeled sample.
    pub fn loss(&self, patch: &Tensor<S>, label: usize) -> Result<S> {
        self.check_patch(patch)?;
        let conv1_out = conv_spectral_forward(patch, &self.conv1, self.config.conv1_stride)?;
        let stacked_relu = relu(&reshape_stack(&conv1_out)?);
        let conv2_relu = relu(&conv2d_forward(
            &stacked_relu,
            &self.conv2,
            self.config.conv2_stride,
        )?);
        let (pool_out, _) =
            maxpool2d_forward(&conv2_relu, self.config.pool_window, self.config.pool_stride)?;
        let flat = pool_out.reshaped(vec![self.shapes.flatten_len])?;
        let fc1_post = relu(&fc_forward(&flat, &self.fc1)?);
        let fc2_post = relu(&fc_forward(&fc1_post, &self.fc2)?);
        let logits = fc_forward(&fc2_post, &self.output)?;
        let (loss, _) = nn::softmax_xent(&logits, label)?;
        Ok(loss)
    }

    /// Predicted class: argmax of the probabilities, ties broken by the
    /// lowest class index.
    pub fn predict(&self, patch: &Tensor<S>) -> Result<usize> {
        let (probs, _) = self.forward(patch)?;
        Ok(argmax(probs.data()))
    }

    /// Exact gradients of the scalar loss with respect to every parameter
    /// and, when requested, the input patch. Requires the cache of a
    /// completed forward pass on this model.
    pub fn backward(
        &self,
        cache: &ForwardCache<S>,
        label: usize,
        need_input_grad: bool,
    ) -> Result<(GradientSet<S>, Option<Tensor<S>>)> {
        if cache.probs.len() != self.config.classes
            || cache.pool_out.len() != self.shapes.flatten_len
        {
            return Err(Error::Usage(
                "forward cache does not match this model's architecture".into(),
            ));
        }
        if label >= self.config.classes {
            return Err(Error::Usage(format!(
                "class label {label} out of range for {} outputs",
                self.config.classes
            )));
        }

        let d_logits = softmax_xent_grad(&cache.probs, label);
        let (g_out, d_fc2_post) = fc_backward(&cache.fc2_post, &self.output, &d_logits, true)?;
        let d_fc2_pre = relu_backward(&cache.fc2_pre, &d_fc2_post.expect("fc grad"));
        let (g_fc2, d_fc1_post) = fc_backward(&cache.fc1_post, &self.fc2, &d_fc2_pre, true)?;
        let d_fc1_pre = relu_backward(&cache.fc1_pre, &d_fc1_post.expect("fc grad"));
        let flat = cache
            .pool_out
            .clone()
            .reshaped(vec![self.shapes.flatten_len])?;
        let (g_fc1, d_flat) = fc_backward(&flat, &self.fc1, &d_fc1_pre, true)?;
        let d_pool = d_flat.expect("fc grad").reshaped(vec![
            self.shapes.pool_h,
            self.shapes.pool_w,
            self.shapes.conv2_channels,
        ])?;
        let d_conv2_relu =
            maxpool2d_backward(cache.conv2_relu.shape(), &cache.pool_argmax, &d_pool)?;
        let d_conv2_out = relu_backward(&cache.conv2_out, &d_conv2_relu);
        let (g_conv2, d_stacked_relu) = conv2d_backward(
            &cache.stacked_relu,
            &self.conv2,
            self.config.conv2_stride,
            &d_conv2_out,
            true,
        )?;
        let d_stacked = relu_backward(&cache.stacked, &d_stacked_relu.expect("conv grad"));
        let d_conv1_out = reshape_unstack(&d_stacked)?;
        let (g_conv1, d_patch) = conv_spectral_backward(
            &cache.patch,
            &self.conv1,
            self.config.conv1_stride,
            &d_conv1_out,
            need_input_grad,
        )?;

        Ok((
            GradientSet {
                conv1: g_conv1,
                conv2: g_conv2,
                fc1: g_fc1,
                fc2: g_fc2,
                output: g_out,
            },
            d_patch,
        ))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

//! Batched f32 forward/backward used by training and bulk inference.
//!
//! Computes the same math as the per-sample reference path in `model`, but
//! stages a whole mini-batch so the fully connected layers run as matrix
//! products (convolutions go through per-sample im2col). Feature matrices
//! are feature-major `[features x batch]`; per-sample staging rows are
//! sample-major. Accumulation orders are fixed, so results are reproducible
//! for a given chunk layout.

use crate::data::cube::HsiCube;
use crate::data::patch::extract_patch_into;
use crate::data::samples::Sample;
use crate::gemm::{gemm_acc, gemm_ta_acc, transpose};
use crate::model::{GradientSet, Model, SPATIAL_WINDOW};

const WINDOW_CELLS: usize = SPATIAL_WINDOW * SPATIAL_WINDOW;

pub(crate) struct Workspace {
    cap: usize,
    // Architecture sizes, copied out of the model for brevity.
    bands: usize,
    depth: usize,
    stride1: usize,
    n1: usize,
    conv1_len: usize,
    k1len: usize,
    stride2: usize,
    c2: usize,
    conv2_h: usize,
    conv2_w: usize,
    pool_window: usize,
    pool_stride: usize,
    pool_h: usize,
    pool_w: usize,
    flatten: usize,
    fc1: usize,
    fc2: usize,
    classes: usize,

    // Per-sample staging, `cap` rows each.
    patches: Vec<f32>,
    ic1t: Vec<f32>,        // cap x (conv1_len x k1len)
    stacked_relu: Vec<f32>, // cap x (conv1_len x n1)
    ic2t: Vec<f32>,        // cap x (conv2_cells x WINDOW_CELLS)
    conv2_relu: Vec<f32>,  // cap x (conv2_cells x c2), channel-last
    pool_out: Vec<f32>,    // cap x flatten; doubles as X^T in the FC stage
    pool_arg: Vec<u32>,    // cap x flatten

    // Feature-major batch matrices.
    x: Vec<f32>,       // flatten x cap
    a1: Vec<f32>,      // fc1 x cap (post-activation)
    a2: Vec<f32>,      // fc2 x cap (post-activation)
    logits: Vec<f32>,  // classes x cap
    dlogits: Vec<f32>, // classes x cap
    d_a2: Vec<f32>,
    d_a1: Vec<f32>,
    d_x: Vec<f32>,
    a1t: Vec<f32>, // cap x fc1
    a2t: Vec<f32>, // cap x fc2

    // Single-sample scratch.
    conv1_out: Vec<f32>, // n1 x conv1_len
    ic1: Vec<f32>,       // k1len x conv1_len
    ic2: Vec<f32>,       // WINDOW_CELLS x conv2_cells
    chm: Vec<f32>,       // c2 x conv2_cells (channel-major)
    d_chm: Vec<f32>,
    d_ic2: Vec<f32>,
    d_flat: Vec<f32>,    // flatten
    d_conv2: Vec<f32>,   // conv2_cells x c2
    d_stacked: Vec<f32>, // conv1_len x n1
    d_conv1: Vec<f32>,   // n1 x conv1_len
}

impl Workspace {
    pub fn new(model: &Model<f32>, cap: usize) -> Self {
        let cfg = model.config();
        let sh = model.shapes();
        let cap = cap.max(1);
        let k1len = WINDOW_CELLS * cfg.conv1_kernel_depth;
        let conv2_cells = sh.conv2_h * sh.conv2_w;
        Workspace {
            cap,
            bands: cfg.bands,
            depth: cfg.conv1_kernel_depth,
            stride1: cfg.conv1_stride,
            n1: cfg.conv1_kernels,
            conv1_len: sh.conv1_len,
            k1len,
            stride2: cfg.conv2_stride,
            c2: cfg.conv2_kernels,
            conv2_h: sh.conv2_h,
            conv2_w: sh.conv2_w,
            pool_window: cfg.pool_window,
            pool_stride: cfg.pool_stride,
            pool_h: sh.pool_h,
            pool_w: sh.pool_w,
            flatten: sh.flatten_len,
            fc1: sh.fc1_nodes,
            fc2: sh.fc2_nodes,
            classes: sh.classes,
            patches: vec![0.0; cap * WINDOW_CELLS * cfg.bands],
            ic1t: vec![0.0; cap * sh.conv1_len * k1len],
            stacked_relu: vec![0.0; cap * sh.conv1_len * cfg.conv1_kernels],
            ic2t: vec![0.0; cap * conv2_cells * WINDOW_CELLS],
            conv2_relu: vec![0.0; cap * conv2_cells * cfg.conv2_kernels],
            pool_out: vec![0.0; cap * sh.flatten_len],
            pool_arg: vec![0; cap * sh.flatten_len],
            x: vec![0.0; sh.flatten_len * cap],
            a1: vec![0.0; sh.fc1_nodes * cap],
            a2: vec![0.0; sh.fc2_nodes * cap],
            logits: vec![0.0; sh.classes * cap],
            dlogits: vec![0.0; sh.classes * cap],
            d_a2: vec![0.0; sh.fc2_nodes * cap],
            d_a1: vec![0.0; sh.fc1_nodes * cap],
            d_x: vec![0.0; sh.flatten_len * cap],
            a1t: vec![0.0; cap * sh.fc1_nodes],
            a2t: vec![0.0; cap * sh.fc2_nodes],
            conv1_out: vec![0.0; cfg.conv1_kernels * sh.conv1_len],
            ic1: vec![0.0; k1len * sh.conv1_len],
            ic2: vec![0.0; WINDOW_CELLS * conv2_cells],
            chm: vec![0.0; cfg.conv2_kernels * conv2_cells],
            d_chm: vec![0.0; cfg.conv2_kernels * conv2_cells],
            d_ic2: vec![0.0; WINDOW_CELLS * conv2_cells],
            d_flat: vec![0.0; sh.flatten_len],
            d_conv2: vec![0.0; conv2_cells * cfg.conv2_kernels],
            d_stacked: vec![0.0; sh.conv1_len * cfg.conv1_kernels],
            d_conv1: vec![0.0; cfg.conv1_kernels * sh.conv1_len],
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    /// Stages `records` (at most `cap`) and runs the stack through the
    /// logits.
    pub fn forward_chunk(&mut self, model: &Model<f32>, cube: &HsiCube, records: &[Sample]) {
        let n = records.len();
        assert!(n <= self.cap, "chunk of {n} exceeds capacity {}", self.cap);
        assert_eq!(cube.bands(), self.bands, "cube bands vs model bands");

        let conv2_cells = self.conv2_h * self.conv2_w;
        for (s, rec) in records.iter().enumerate() {
            let patch = &mut self.patches[s * WINDOW_CELLS * self.bands..][..WINDOW_CELLS * self.bands];
            extract_patch_into(cube, rec.x, rec.y, patch);

            // conv1 as kernels[n1 x k1len] . im2col[k1len x conv1_len]
            let ic1t = &mut self.ic1t[s * self.conv1_len * self.k1len..][..self.conv1_len * self.k1len];
            for j in 0..self.conv1_len {
                let row = &mut ic1t[j * self.k1len..(j + 1) * self.k1len];
                for rc in 0..WINDOW_CELLS {
                    row[rc * self.depth..(rc + 1) * self.depth].copy_from_slice(
                        &patch[rc * self.bands + j * self.stride1..][..self.depth],
                    );
                }
            }
            transpose(&mut self.ic1, ic1t, self.conv1_len, self.k1len);
            let biases = model.conv1.biases.data();
            for (i, row) in self.conv1_out.chunks_exact_mut(self.conv1_len).enumerate() {
                row.fill(biases[i]);
            }
            gemm_acc(
                &mut self.conv1_out,
                model.conv1.weights.data(),
                &self.ic1,
                self.n1,
                self.k1len,
                self.conv1_len,
            );

            // Stack feature vectors as columns, activation fused in.
            let stacked = &mut self.stacked_relu[s * self.conv1_len * self.n1..][..self.conv1_len * self.n1];
            for i in 0..self.n1 {
                for j in 0..self.conv1_len {
                    let v = self.conv1_out[i * self.conv1_len + j];
                    stacked[j * self.n1 + i] = if v > 0.0 { v } else { 0.0 };
                }
            }

            // conv2 as kernels[c2 x 9] . im2col[9 x cells], channel-major,
            // then transposed to the channel-last layout pooling expects.
            let ic2t = &mut self.ic2t[s * conv2_cells * WINDOW_CELLS..][..conv2_cells * WINDOW_CELLS];
            for oy in 0..self.conv2_h {
                for ox in 0..self.conv2_w {
                    let row = &mut ic2t[(oy * self.conv2_w + ox) * WINDOW_CELLS..][..WINDOW_CELLS];
                    for ky in 0..SPATIAL_WINDOW {
                        let src = (oy * self.stride2 + ky) * self.n1 + ox * self.stride2;
                        row[ky * SPATIAL_WINDOW..(ky + 1) * SPATIAL_WINDOW]
                            .copy_from_slice(&stacked[src..src + SPATIAL_WINDOW]);
                    }
                }
            }
            transpose(&mut self.ic2, ic2t, conv2_cells, WINDOW_CELLS);
            let biases = model.conv2.biases.data();
            for (ch, row) in self.chm.chunks_exact_mut(conv2_cells).enumerate() {
                row.fill(biases[ch]);
            }
            gemm_acc(
                &mut self.chm,
                model.conv2.weights.data(),
                &self.ic2,
                self.c2,
                WINDOW_CELLS,
                conv2_cells,
            );
            let conv2_relu = &mut self.conv2_relu[s * conv2_cells * self.c2..][..conv2_cells * self.c2];
            transpose(conv2_relu, &self.chm, self.c2, conv2_cells);
            for v in conv2_relu.iter_mut() {
                if *v <= 0.0 {
                    *v = 0.0;
                }
            }

            // Max pooling, channel-last, first-wins ties.
            let pool_out = &mut self.pool_out[s * self.flatten..][..self.flatten];
            let pool_arg = &mut self.pool_arg[s * self.flatten..][..self.flatten];
            for oy in 0..self.pool_h {
                for ox in 0..self.pool_w {
                    for ch in 0..self.c2 {
                        let mut best_idx =
                            (oy * self.pool_stride * self.conv2_w + ox * self.pool_stride) * self.c2 + ch;
                        let mut best = conv2_relu[best_idx];
                        for ky in 0..self.pool_window {
                            for kx in 0..self.pool_window {
                                let idx = ((oy * self.pool_stride + ky) * self.conv2_w
                                    + ox * self.pool_stride
                                    + kx)
                                    * self.c2
                                    + ch;
                                if conv2_relu[idx] > best {
                                    best = conv2_relu[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = (oy * self.pool_w + ox) * self.c2 + ch;
                        pool_out[o] = best;
                        pool_arg[o] = best_idx as u32;
                    }
                }
            }
        }

        // Fully connected stage on the whole chunk.
        transpose(
            &mut self.x[..self.flatten * n],
            &self.pool_out[..n * self.flatten],
            n,
            self.flatten,
        );
        fc_layer(
            &mut self.a1[..self.fc1 * n],
            model.fc1.weights.data(),
            model.fc1.biases.data(),
            &self.x[..self.flatten * n],
            self.fc1,
            self.flatten,
            n,
            true,
        );
        fc_layer(
            &mut self.a2[..self.fc2 * n],
            model.fc2.weights.data(),
            model.fc2.biases.data(),
            &self.a1[..self.fc1 * n],
            self.fc2,
            self.fc1,
            n,
            true,
        );
        fc_layer(
            &mut self.logits[..self.classes * n],
            model.output.weights.data(),
            model.output.biases.data(),
            &self.a2[..self.fc2 * n],
            self.classes,
            self.fc2,
            n,
            false,
        );
    }

    /// Predicted class per staged column (argmax, lowest index on ties).
    pub fn predictions(&self, n: usize, out: &mut Vec<usize>) {
        for col in 0..n {
            let mut best = 0;
            for i in 1..self.classes {
                if self.logits[i * n + col] > self.logits[best * n + col] {
                    best = i;
                }
            }
            out.push(best);
        }
    }

    /// Summed cross-entropy loss of the staged columns against labels.
    pub fn loss_sum(&self, records: &[Sample]) -> f64 {
        let n = records.len();
        let mut total = 0.0f64;
        for (col, rec) in records.iter().enumerate() {
            let col_at = |i: usize| self.logits[i * n + col];
            let mut max = col_at(0);
            for i in 1..self.classes {
                max = max.max(col_at(i));
            }
            let mut sum = 0.0f32;
            for i in 0..self.classes {
                sum += (col_at(i) - max).exp();
            }
            total += (sum.ln() + max - col_at(rec.class)) as f64;
        }
        total
    }

    /// Backward over the staged chunk. `inv_batch` is 1 / (whole batch
    /// size) so per-chunk contributions sum to the batch-mean gradient.
    /// Returns the summed (unscaled) loss. Gradients accumulate into
    /// `grads`, which the caller zeroes between steps.
    pub fn backward_chunk(
        &mut self,
        model: &Model<f32>,
        records: &[Sample],
        inv_batch: f32,
        grads: &mut GradientSet<f32>,
    ) -> f64 {
        let n = records.len();
        let conv2_cells = self.conv2_h * self.conv2_w;

        // Softmax + cross-entropy at the logits.
        let mut loss_sum = 0.0f64;
        for (col, rec) in records.iter().enumerate() {
            let col_at = |i: usize| self.logits[i * n + col];
            let mut max = col_at(0);
            for i in 1..self.classes {
                max = max.max(col_at(i));
            }
            let mut sum = 0.0f32;
            for i in 0..self.classes {
                sum += (col_at(i) - max).exp();
            }
            loss_sum += (sum.ln() + max - col_at(rec.class)) as f64;
            for i in 0..self.classes {
                let p = (col_at(i) - max).exp() / sum;
                let delta = if i == rec.class { p - 1.0 } else { p };
                self.dlogits[i * n + col] = delta * inv_batch;
            }
        }

        // Output layer.
        transpose(&mut self.a2t[..n * self.fc2], &self.a2[..self.fc2 * n], self.fc2, n);
        gemm_acc(
            grads.output.weights.data_mut(),
            &self.dlogits[..self.classes * n],
            &self.a2t[..n * self.fc2],
            self.classes,
            n,
            self.fc2,
        );
        add_row_sums(
            grads.output.biases.data_mut(),
            &self.dlogits[..self.classes * n],
            n,
        );
        self.d_a2[..self.fc2 * n].fill(0.0);
        gemm_ta_acc(
            &mut self.d_a2[..self.fc2 * n],
            model.output.weights.data(),
            &self.dlogits[..self.classes * n],
            self.fc2,
            self.classes,
            n,
        );
        mask_by_positive(&mut self.d_a2[..self.fc2 * n], &self.a2[..self.fc2 * n]);

        // Hidden fully connected layers.
        transpose(&mut self.a1t[..n * self.fc1], &self.a1[..self.fc1 * n], self.fc1, n);
        gemm_acc(
            grads.fc2.weights.data_mut(),
            &self.d_a2[..self.fc2 * n],
            &self.a1t[..n * self.fc1],
            self.fc2,
            n,
            self.fc1,
        );
        add_row_sums(grads.fc2.biases.data_mut(), &self.d_a2[..self.fc2 * n], n);
        self.d_a1[..self.fc1 * n].fill(0.0);
        gemm_ta_acc(
            &mut self.d_a1[..self.fc1 * n],
            model.fc2.weights.data(),
            &self.d_a2[..self.fc2 * n],
            self.fc1,
            self.fc2,
            n,
        );
        mask_by_positive(&mut self.d_a1[..self.fc1 * n], &self.a1[..self.fc1 * n]);

        gemm_acc(
            grads.fc1.weights.data_mut(),
            &self.d_a1[..self.fc1 * n],
            &self.pool_out[..n * self.flatten],
            self.fc1,
            n,
            self.flatten,
        );
        add_row_sums(grads.fc1.biases.data_mut(), &self.d_a1[..self.fc1 * n], n);
        self.d_x[..self.flatten * n].fill(0.0);
        gemm_ta_acc(
            &mut self.d_x[..self.flatten * n],
            model.fc1.weights.data(),
            &self.d_a1[..self.fc1 * n],
            self.flatten,
            self.fc1,
            n,
        );

        // Convolution stages, one sample at a time.
        for s in 0..n {
            for k in 0..self.flatten {
                self.d_flat[k] = self.d_x[k * n + s];
            }

            // Pool routing, then the conv2 activation mask.
            let conv2_relu = &self.conv2_relu[s * conv2_cells * self.c2..][..conv2_cells * self.c2];
            let pool_arg = &self.pool_arg[s * self.flatten..][..self.flatten];
            self.d_conv2.fill(0.0);
            for (k, &arg) in pool_arg.iter().enumerate() {
                self.d_conv2[arg as usize] += self.d_flat[k];
            }
            mask_by_positive(&mut self.d_conv2, conv2_relu);

            transpose(&mut self.d_chm, &self.d_conv2, conv2_cells, self.c2);
            let ic2t = &self.ic2t[s * conv2_cells * WINDOW_CELLS..][..conv2_cells * WINDOW_CELLS];
            gemm_acc(
                grads.conv2.weights.data_mut(),
                &self.d_chm,
                ic2t,
                self.c2,
                conv2_cells,
                WINDOW_CELLS,
            );
            add_row_sums(grads.conv2.biases.data_mut(), &self.d_chm, conv2_cells);
            self.d_ic2.fill(0.0);
            gemm_ta_acc(
                &mut self.d_ic2,
                model.conv2.weights.data(),
                &self.d_chm,
                WINDOW_CELLS,
                self.c2,
                conv2_cells,
            );

            // Scatter window gradients back onto the stacked matrix.
            self.d_stacked.fill(0.0);
            for oy in 0..self.conv2_h {
                for ox in 0..self.conv2_w {
                    let p = oy * self.conv2_w + ox;
                    for ky in 0..SPATIAL_WINDOW {
                        for kx in 0..SPATIAL_WINDOW {
                            let w = ky * SPATIAL_WINDOW + kx;
                            self.d_stacked
                                [(oy * self.stride2 + ky) * self.n1 + ox * self.stride2 + kx] +=
                                self.d_ic2[w * conv2_cells + p];
                        }
                    }
                }
            }
            let stacked = &self.stacked_relu[s * self.conv1_len * self.n1..][..self.conv1_len * self.n1];
            mask_by_positive(&mut self.d_stacked, stacked);

            // Back through the stacking permutation to feature-vector rows.
            for i in 0..self.n1 {
                for j in 0..self.conv1_len {
                    self.d_conv1[i * self.conv1_len + j] = self.d_stacked[j * self.n1 + i];
                }
            }
            let ic1t = &self.ic1t[s * self.conv1_len * self.k1len..][..self.conv1_len * self.k1len];
            gemm_acc(
                grads.conv1.weights.data_mut(),
                &self.d_conv1,
                ic1t,
                self.n1,
                self.conv1_len,
                self.k1len,
            );
            add_row_sums(grads.conv1.biases.data_mut(), &self.d_conv1, self.conv1_len);
        }

        loss_sum
    }
}

/// `out[m x n] = weights[m x k] . input[k x n] + bias`, optionally ReLU'd.
#[allow(clippy::too_many_arguments)]
fn fc_layer(
    out: &mut [f32],
    weights: &[f32],
    biases: &[f32],
    input: &[f32],
    m: usize,
    k: usize,
    n: usize,
    activate: bool,
) {
    for (i, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(biases[i]);
    }
    gemm_acc(out, weights, input, m, k, n);
    if activate {
        for v in out.iter_mut() {
            if *v <= 0.0 {
                *v = 0.0;
            }
        }
    }
}

fn add_row_sums(acc: &mut [f32], matrix: &[f32], n: usize) {
    for (a, row) in acc.iter_mut().zip(matrix.chunks_exact(n)) {
        let mut sum = 0.0f32;
        for &v in row {
            sum += v;
        }
        *a += sum;
    }
}

/// Zeroes gradient entries whose forward activation was not positive. The
/// activations here are post-ReLU, and `post > 0` exactly when `pre > 0`.
fn mask_by_positive(grad: &mut [f32], activation: &[f32]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Bulk forward-only driver for evaluation and map rendering.
pub(crate) struct BatchPredictor {
    ws: Workspace,
}

impl BatchPredictor {
    const CHUNK: usize = 64;

    pub fn new(model: &Model<f32>) -> Self {
        BatchPredictor {
            ws: Workspace::new(model, Self::CHUNK),
        }
    }

    /// Predicted class index for each record.
    pub fn predict(
        &mut self,
        model: &Model<f32>,
        cube: &HsiCube,
        records: &[Sample],
    ) -> Vec<usize> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(self.ws.capacity()) {
            self.ws.forward_chunk(model, cube, chunk);
            self.ws.predictions(chunk.len(), &mut out);
        }
        out
    }

    /// Predictions plus the mean cross-entropy loss against the records'
    /// own classes.
    pub fn predict_with_loss(
        &mut self,
        model: &Model<f32>,
        cube: &HsiCube,
        records: &[Sample],
    ) -> (Vec<usize>, f64) {
        let mut out = Vec::with_capacity(records.len());
        let mut loss = 0.0;
        for chunk in records.chunks(self.ws.capacity()) {
            self.ws.forward_chunk(model, cube, chunk);
            self.ws.predictions(chunk.len(), &mut out);
            loss += self.ws.loss_sum(chunk);
        }
        let denom = records.len().max(1) as f64;
        (out, loss / denom)
    }
}

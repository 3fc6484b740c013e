//! Forward and backward passes for every layer the network uses.
//!
//! All convolutions are valid (kernel fully inside the input):
//! `out = (in - kernel) / stride + 1`, rounded down. Nothing here mutates
//! its inputs; backward functions take the cached forward inputs and the
//! incoming gradient and return fresh gradient buffers.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Weights plus one bias per output channel or node.
///
/// The same struct carries parameter gradients, which are shape-congruent
/// with the parameters they differentiate.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<S: Scalar> {
    pub weights: Tensor<S>,
    pub biases: Tensor<S>,
}

impl<S: Scalar> LayerParams<S> {
    pub fn new(weights: Tensor<S>, biases: Tensor<S>) -> Self {
        LayerParams { weights, biases }
    }

    pub fn zeros(weight_shape: Vec<usize>, bias_len: usize) -> Self {
        LayerParams {
            weights: Tensor::zeros(weight_shape),
            biases: Tensor::zeros(vec![bias_len]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LayerParams {
            weights: Tensor::zeros(self.weights.shape().to_vec()),
            biases: Tensor::zeros(self.biases.shape().to_vec()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn shape_congruent(&self, other: &Self) -> bool {
        self.weights.shape() == other.weights.shape()
            && self.biases.shape() == other.biases.shape()
    }

    pub fn convert<T: Scalar>(&self) -> LayerParams<T> {
        LayerParams {
            weights: self.weights.convert(),
            biases: self.biases.convert(),
        }
    }
}

/// Spectral convolution over a neighborhood cube.
///
/// The patch is `[h, w, bands]`; each of the `n` kernels is `[h, w, depth]`
/// and slides along the band axis only, producing one feature vector per
/// kernel: output `[n, out_len]` with `out_len = (bands - depth) / stride + 1`.
pub fn conv_spectral_forward<S: Scalar>(
    patch: &Tensor<S>,
    params: &LayerParams<S>,
    stride: usize,
) -> Result<Tensor<S>> {
    if stride == 0 {
        return Err(Error::Usage("spectral convolution stride must be >= 1".into()));
    }
    let [ph, pw, bands] = dims3(patch, "spectral conv patch")?;
    let [n, kh, kw, depth] = dims4(&params.weights, "spectral conv kernels")?;
    if (kh, kw) != (ph, pw) {
        return Err(Error::Dimension(format!(
            "kernel window {kh}x{kw} does not match patch window {ph}x{pw}"
        )));
    }
    if bands < depth {
        return Err(Error::Dimension(format!(
            "kernel depth {depth} exceeds patch band count {bands}"
        )));
    }
    if params.biases.len() != n {
        return Err(Error::Dimension(format!(
            "{n} kernels need {n} biases, got {}",
            params.biases.len()
        )));
    }

    let out_len = (bands - depth) / stride + 1;
    let mut out = Tensor::zeros(vec![n, out_len]);
    let pd = patch.data();
    let wd = params.weights.data();
    let bd = params.biases.data();
    let od = out.data_mut();
    for i in 0..n {
        for j in 0..out_len {
            let mut acc = bd[i];
            for rc in 0..ph * pw {
                let pr = &pd[rc * bands + j * stride..rc * bands + j * stride + depth];
                let wr = &wd[(i * ph * pw + rc) * depth..(i * ph * pw + rc + 1) * depth];
                for (p, w) in pr.iter().zip(wr) {
                    acc += *p * *w;
                }
            }
            od[i * out_len + j] = acc;
        }
    }
    Ok(out)
}

/// Gradients of the spectral convolution. Returns parameter gradients and,
/// when requested, the gradient with respect to the patch.
pub fn conv_spectral_backward<S: Scalar>(
    patch: &Tensor<S>,
    params: &LayerParams<S>,
    stride: usize,
    d_out: &Tensor<S>,
    need_input_grad: bool,
) -> Result<(LayerParams<S>, Option<Tensor<S>>)> {
    let [ph, pw, bands] = dims3(patch, "spectral conv patch")?;
    let [n, _, _, depth] = dims4(&params.weights, "spectral conv kernels")?;
    let out_len = (bands - depth) / stride + 1;
    if d_out.shape() != [n, out_len] {
        return Err(Error::Dimension(format!(
            "spectral conv gradient shape {:?}, expected [{n}, {out_len}]",
            d_out.shape()
        )));
    }

    let mut grads = params.zeros_like();
    let mut d_patch = need_input_grad.then(|| Tensor::zeros(vec![ph, pw, bands]));
    let pd = patch.data();
    let wd = params.weights.data();
    let gd = d_out.data();
    {
        let gw = grads.weights.data_mut();
        let gb = grads.biases.data_mut();
        for i in 0..n {
            for j in 0..out_len {
                let g = gd[i * out_len + j];
                gb[i] += g;
                for rc in 0..ph * pw {
                    let pr = &pd[rc * bands + j * stride..rc * bands + j * stride + depth];
                    let gw_run = &mut gw[(i * ph * pw + rc) * depth..(i * ph * pw + rc + 1) * depth];
                    for (gwv, p) in gw_run.iter_mut().zip(pr) {
                        *gwv += g * *p;
                    }
                }
            }
        }
    }
    if let Some(dp) = d_patch.as_mut() {
        let dpd = dp.data_mut();
        for i in 0..n {
            for j in 0..out_len {
                let g = gd[i * out_len + j];
                for rc in 0..ph * pw {
                    let wr = &wd[(i * ph * pw + rc) * depth..(i * ph * pw + rc + 1) * depth];
                    let dp_run = &mut dpd[rc * bands + j * stride..rc * bands + j * stride + depth];
                    for (dpv, w) in dp_run.iter_mut().zip(wr) {
                        *dpv += g * *w;
                    }
                }
            }
        }
    }
    Ok((grads, d_patch))
}

/// Stacks the feature vectors `[n, len]` as columns of a `[len, n]`
/// single-channel matrix: feature vector `c` becomes column `c`.
pub fn reshape_stack<S: Scalar>(vectors: &Tensor<S>) -> Result<Tensor<S>> {
    let [n, len] = dims2(vectors, "reshape input")?;
    let mut out = Tensor::zeros(vec![len, n]);
    let src = vectors.data();
    let dst = out.data_mut();
    for i in 0..n {
        for j in 0..len {
            dst[j * n + i] = src[i * len + j];
        }
    }
    Ok(out)
}

/// Inverse permutation of [`reshape_stack`]: routes a `[len, n]` gradient
/// back to the `[n, len]` feature-vector layout.
pub fn reshape_unstack<S: Scalar>(d_stacked: &Tensor<S>) -> Result<Tensor<S>> {
    reshape_stack(d_stacked)
}

/// Valid 2-D convolution of a single-channel matrix `[h, w]` by `c` kernels
/// `[c, kh, kw]`, producing `[h2, w2, c]` (channel-last).
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    params: &LayerParams<S>,
    stride: usize,
) -> Result<Tensor<S>> {
    if stride == 0 {
        return Err(Error::Usage("2-D convolution stride must be >= 1".into()));
    }
    let [h, w] = dims2(input, "2-D conv input")?;
    let [c, kh, kw] = dims3(&params.weights, "2-D conv kernels")?;
    if h < kh || w < kw {
        return Err(Error::Dimension(format!(
            "input {h}x{w} is smaller than the {kh}x{kw} kernel"
        )));
    }
    if params.biases.len() != c {
        return Err(Error::Dimension(format!(
            "{c} kernels need {c} biases, got {}",
            params.biases.len()
        )));
    }

    let h2 = (h - kh) / stride + 1;
    let w2 = (w - kw) / stride + 1;
    let mut out = Tensor::zeros(vec![h2, w2, c]);
    let id = input.data();
    let wd = params.weights.data();
    let bd = params.biases.data();
    let od = out.data_mut();
    for oy in 0..h2 {
        for ox in 0..w2 {
            for ch in 0..c {
                let mut acc = bd[ch];
                for ky in 0..kh {
                    let irow = &id[(oy * stride + ky) * w + ox * stride..][..kw];
                    let wrow = &wd[(ch * kh + ky) * kw..][..kw];
                    for (iv, wv) in irow.iter().zip(wrow) {
                        acc += *iv * *wv;
                    }
                }
                od[(oy * w2 + ox) * c + ch] = acc;
            }
        }
    }
    Ok(out)
}

/// Gradients of the 2-D convolution.
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    params: &LayerParams<S>,
    stride: usize,
    d_out: &Tensor<S>,
    need_input_grad: bool,
) -> Result<(LayerParams<S>, Option<Tensor<S>>)> {
    let [h, w] = dims2(input, "2-D conv input")?;
    let [c, kh, kw] = dims3(&params.weights, "2-D conv kernels")?;
    let h2 = (h - kh) / stride + 1;
    let w2 = (w - kw) / stride + 1;
    if d_out.shape() != [h2, w2, c] {
        return Err(Error::Dimension(format!(
            "2-D conv gradient shape {:?}, expected [{h2}, {w2}, {c}]",
            d_out.shape()
        )));
    }

    let mut grads = params.zeros_like();
    let mut d_in = need_input_grad.then(|| Tensor::zeros(vec![h, w]));
    let id = input.data();
    let wd = params.weights.data();
    let gd = d_out.data();
    {
        let gw = grads.weights.data_mut();
        let gb = grads.biases.data_mut();
        for oy in 0..h2 {
            for ox in 0..w2 {
                for ch in 0..c {
                    let g = gd[(oy * w2 + ox) * c + ch];
                    gb[ch] += g;
                    for ky in 0..kh {
                        let irow = &id[(oy * stride + ky) * w + ox * stride..][..kw];
                        let gwrow = &mut gw[(ch * kh + ky) * kw..][..kw];
                        for (gwv, iv) in gwrow.iter_mut().zip(irow) {
                            *gwv += g * *iv;
                        }
                    }
                }
            }
        }
    }
    if let Some(di) = d_in.as_mut() {
        let did = di.data_mut();
        for oy in 0..h2 {
            for ox in 0..w2 {
                for ch in 0..c {
                    let g = gd[(oy * w2 + ox) * c + ch];
                    for ky in 0..kh {
                        let dirow = &mut did[(oy * stride + ky) * w + ox * stride..][..kw];
                        let wrow = &wd[(ch * kh + ky) * kw..][..kw];
                        for (div, wv) in dirow.iter_mut().zip(wrow) {
                            *div += g * *wv;
                        }
                    }
                }
            }
        }
    }
    Ok((grads, d_in))
}

/// Per-channel max pooling over `[h, w, c]`. Besides the pooled tensor it
/// returns, per output cell, the flat index of the winning input element;
/// ties go to the first candidate in scan order so backward is
/// deterministic. Trailing rows/columns that do not fill a window are
/// dropped.
pub fn maxpool2d_forward<S: Scalar>(
    input: &Tensor<S>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<S>, Vec<usize>)> {
    if window == 0 || stride == 0 {
        return Err(Error::Usage("pool window and stride must be >= 1".into()));
    }
    let [h, w, c] = dims3(input, "pool input")?;
    if h < window || w < window {
        return Err(Error::Dimension(format!(
            "input {h}x{w} is smaller than the {window}x{window} pool window"
        )));
    }
    let h2 = (h - window) / stride + 1;
    let w2 = (w - window) / stride + 1;
    let mut out = Tensor::zeros(vec![h2, w2, c]);
    let mut argmax = vec![0usize; h2 * w2 * c];
    let id = input.data();
    let od = out.data_mut();
    for oy in 0..h2 {
        for ox in 0..w2 {
            for ch in 0..c {
                let mut best_idx = (oy * stride * w + ox * stride) * c + ch;
                let mut best = id[best_idx];
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                        if id[idx] > best {
                            best = id[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (oy * w2 + ox) * c + ch;
                od[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes a pooled gradient back: each incoming value lands only on the
/// input element recorded in the argmax map; everything else stays zero.
pub fn maxpool2d_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    d_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    if argmax.len() != d_out.len() {
        return Err(Error::Usage(format!(
            "argmax map has {} entries, gradient has {}",
            argmax.len(),
            d_out.len()
        )));
    }
    let mut d_in = Tensor::zeros(input_shape.to_vec());
    let did = d_in.data_mut();
    for (&idx, &g) in argmax.iter().zip(d_out.data()) {
        did[idx] += g;
    }
    Ok(d_in)
}

/// Fully connected layer: `out = W . input + b` with `W` of shape
/// `[out, in]`.
pub fn fc_forward<S: Scalar>(input: &Tensor<S>, params: &LayerParams<S>) -> Result<Tensor<S>> {
    let [m, n] = dims2(&params.weights, "fully connected weights")?;
    if input.len() != n {
        return Err(Error::Dimension(format!(
            "fully connected layer expects {n} inputs, got {}",
            input.len()
        )));
    }
    if params.biases.len() != m {
        return Err(Error::Dimension(format!(
            "{m} output nodes need {m} biases, got {}",
            params.biases.len()
        )));
    }
    let mut out = Tensor::zeros(vec![m]);
    let xd = input.data();
    let wd = params.weights.data();
    let od = out.data_mut();
    for (i, o) in od.iter_mut().enumerate() {
        let mut acc = params.biases.data()[i];
        for (w, x) in wd[i * n..(i + 1) * n].iter().zip(xd) {
            acc += *w * *x;
        }
        *o = acc;
    }
    Ok(out)
}

/// Gradients of the fully connected layer.
pub fn fc_backward<S: Scalar>(
    input: &Tensor<S>,
    params: &LayerParams<S>,
    d_out: &Tensor<S>,
    need_input_grad: bool,
) -> Result<(LayerParams<S>, Option<Tensor<S>>)> {
    let [m, n] = dims2(&params.weights, "fully connected weights")?;
    if input.len() != n || d_out.len() != m {
        return Err(Error::Dimension(format!(
            "fully connected backward: input {} (expected {n}), gradient {} (expected {m})",
            input.len(),
            d_out.len()
        )));
    }
    let mut grads = params.zeros_like();
    let mut d_in = need_input_grad.then(|| Tensor::zeros(vec![n]));
    let xd = input.data();
    let wd = params.weights.data();
    let gd = d_out.data();
    {
        let gw = grads.weights.data_mut();
        let gb = grads.biases.data_mut();
        for i in 0..m {
            let g = gd[i];
            gb[i] = g;
            for (gwv, x) in gw[i * n..(i + 1) * n].iter_mut().zip(xd) {
                *gwv += g * *x;
            }
        }
    }
    if let Some(di) = d_in.as_mut() {
        let did = di.data_mut();
        for i in 0..m {
            let g = gd[i];
            for (div, w) in did.iter_mut().zip(&wd[i * n..(i + 1) * n]) {
                *div += g * *w;
            }
        }
    }
    Ok((grads, d_in))
}

/// Elementwise `max(0, x)`.
pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| v.fmax(S::ZERO))
}

/// Masks the incoming gradient by the sign of the forward input.
pub fn relu_backward<S: Scalar>(forward_input: &Tensor<S>, d_out: &Tensor<S>) -> Tensor<S> {
    assert_eq!(forward_input.shape(), d_out.shape(), "relu backward shape");
    let mut out = d_out.clone();
    for (o, x) in out.data_mut().iter_mut().zip(forward_input.data()) {
        if *x <= S::ZERO {
            *o = S::ZERO;
        }
    }
    out
}

/// Probabilities of a logit vector, computed with max subtraction.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let max = logits
        .data()
        .iter()
        .fold(logits.data()[0], |a, &b| a.fmax(b));
    let mut out = logits.map(|v| (v - max).exp());
    let sum = out.data().iter().fold(S::ZERO, |a, &b| a + b);
    for v in out.data_mut() {
        *v = *v / sum;
    }
    out
}

/// Softmax probabilities and cross-entropy loss against a class index.
///
/// The loss is evaluated as `logsumexp(logits) - logits[label]`, which stays
/// finite for any finite logits.
pub fn softmax_xent<S: Scalar>(logits: &Tensor<S>, label: usize) -> Result<(S, Tensor<S>)> {
    let classes = logits.len();
    if label >= classes {
        return Err(Error::Usage(format!(
            "class label {label} out of range for {classes} outputs"
        )));
    }
    let max = logits
        .data()
        .iter()
        .fold(logits.data()[0], |a, &b| a.fmax(b));
    let mut probs = logits.map(|v| (v - max).exp());
    let sum = probs.data().iter().fold(S::ZERO, |a, &b| a + b);
    let loss = sum.ln() + max - logits.data()[label];
    for v in probs.data_mut() {
        *v = *v / sum;
    }
    Ok((loss, probs))
}

/// Gradient of the cross-entropy loss at the logits: `probs - onehot(label)`.
pub fn softmax_xent_grad<S: Scalar>(probs: &Tensor<S>, label: usize) -> Tensor<S> {
    let mut d = probs.clone();
    d.data_mut()[label] -= S::ONE;
    d
}

fn dims2<S: Scalar>(t: &Tensor<S>, what: &str) -> Result<[usize; 2]> {
    match t.shape() {
        &[a, b] => Ok([a, b]),
        s => Err(Error::Dimension(format!("{what} must be rank 2, got {s:?}"))),
    }
}

fn dims3<S: Scalar>(t: &Tensor<S>, what: &str) -> Result<[usize; 3]> {
    match t.shape() {
        &[a, b, c] => Ok([a, b, c]),
        s => Err(Error::Dimension(format!("{what} must be rank 3, got {s:?}"))),
    }
}

fn dims4<S: Scalar>(t: &Tensor<S>, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(Error::Dimension(format!("{what} must be rank 4, got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Pcg32, STREAM_CHECK};

    fn ones<S: Scalar>(shape: Vec<usize>) -> Tensor<S> {
        Tensor::filled(shape, S::ONE)
    }

    #[test]
    fn spectral_conv_all_ones_windows() {
        // 3x3x2 window of ones sums to 18 at each of the two stride-2 offsets.
        let patch = ones::<f64>(vec![3, 3, 4]);
        let params = LayerParams::new(ones(vec![1, 3, 3, 2]), Tensor::zeros(vec![1]));
        let out = conv_spectral_forward(&patch, &params, 2).unwrap();
        assert_eq!(out.shape(), [1, 2]);
        assert_eq!(out.data(), &[18.0, 18.0]);
    }

    #[test]
    fn spectral_conv_zero_kernels_annihilate() {
        let mut rng = Pcg32::new(5, STREAM_CHECK);
        let patch = Tensor::<f64>::new(
            vec![3, 3, 8],
            (0..72).map(|_| rng.range_f64(-2.0, 2.0)).collect(),
        )
        .unwrap();
        let params = LayerParams::zeros(vec![3, 3, 3, 4], 3);
        let out = conv_spectral_forward(&patch, &params, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spectral_conv_output_length_matches_stride_formula() {
        let patch = Tensor::<f32>::zeros(vec![3, 3, 176]);
        let params = LayerParams::zeros(vec![1, 3, 3, 24], 1);
        let out = conv_spectral_forward(&patch, &params, 9).unwrap();
        assert_eq!(out.shape(), [1, 17]);
    }

    #[test]
    fn spectral_conv_rejects_shallow_patch() {
        let patch = Tensor::<f32>::zeros(vec![3, 3, 4]);
        let params = LayerParams::zeros(vec![1, 3, 3, 8], 1);
        let err = conv_spectral_forward(&patch, &params, 1).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{err}");
    }

    #[test]
    fn spectral_conv_rejects_window_mismatch() {
        let patch = Tensor::<f32>::zeros(vec![3, 3, 8]);
        let params = LayerParams::zeros(vec![1, 2, 2, 4], 1);
        let err = conv_spectral_forward(&patch, &params, 1).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{err}");
    }

    #[test]
    fn reshape_stacks_vectors_as_columns() {
        let v = Tensor::<f64>::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let m = reshape_stack(&v).unwrap();
        assert_eq!(m.shape(), [3, 2]);
        assert_eq!(m.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn reshape_single_vector_is_a_column() {
        let v = Tensor::<f64>::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = reshape_stack(&v).unwrap();
        assert_eq!(m.shape(), [4, 1]);
        assert_eq!(m.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn reshape_round_trip_is_identity() {
        let mut rng = Pcg32::new(9, STREAM_CHECK);
        let v = Tensor::<f64>::new(
            vec![5, 7],
            (0..35).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let back = reshape_unstack(&reshape_stack(&v).unwrap()).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn conv2d_full_window_sum() {
        let input = ones::<f64>(vec![3, 3]);
        let params = LayerParams::new(ones(vec![1, 3, 3]), Tensor::zeros(vec![1]));
        let out = conv2d_forward(&input, &params, 1).unwrap();
        assert_eq!(out.shape(), [1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv2d_output_dims() {
        let input = Tensor::<f32>::zeros(vec![17, 30]);
        let params = LayerParams::zeros(vec![64, 3, 3], 64);
        let out = conv2d_forward(&input, &params, 1).unwrap();
        assert_eq!(out.shape(), [15, 28, 64]);
    }

    #[test]
    fn conv2d_delta_kernel_picks_interior() {
        let input = Tensor::<f64>::new(vec![4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let mut kernel = Tensor::zeros(vec![1, 3, 3]);
        kernel.set(&[0, 1, 1], 1.0);
        let params = LayerParams::new(kernel, Tensor::zeros(vec![1]));
        let out = conv2d_forward(&input, &params, 1).unwrap();
        // Interior of the 4x4 ramp.
        assert_eq!(out.data(), &[5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn conv2d_rejects_small_input() {
        let input = Tensor::<f32>::zeros(vec![2, 5]);
        let params = LayerParams::zeros(vec![1, 3, 3], 1);
        assert!(matches!(
            conv2d_forward(&input, &params, 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn maxpool_picks_max_and_argmax() {
        let input = Tensor::<f64>::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, argmax) = maxpool2d_forward(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), [1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(argmax, vec![3]);
    }

    #[test]
    fn maxpool_ties_take_first_in_scan_order() {
        let input = Tensor::<f64>::filled(vec![4, 4, 2], 7.0);
        let (out, argmax) = maxpool2d_forward(&input, 2, 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));
        for (o, &idx) in argmax.iter().enumerate() {
            let (cell, ch) = (o / 2, o % 2);
            let (oy, ox) = (cell / 2, cell % 2);
            assert_eq!(idx, (oy * 2 * 4 + ox * 2) * 2 + ch);
        }
    }

    #[test]
    fn maxpool_halves_odd_dims_by_flooring() {
        let input = Tensor::<f32>::zeros(vec![15, 28, 64]);
        let (out, _) = maxpool2d_forward(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), [7, 14, 64]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax_only() {
        let input = Tensor::<f64>::new(vec![2, 2, 1], vec![1.0, 9.0, 3.0, 4.0]).unwrap();
        let (_, argmax) = maxpool2d_forward(&input, 2, 2).unwrap();
        let g = Tensor::<f64>::new(vec![1, 1, 1], vec![5.0]).unwrap();
        let d_in = maxpool2d_backward(&[2, 2, 1], &argmax, &g).unwrap();
        assert_eq!(d_in.data(), &[0.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn fc_identity_and_zero_weights() {
        let x = Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap();
        let mut eye = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            eye.set(&[i, i], 1.0);
        }
        let id = LayerParams::new(eye, Tensor::zeros(vec![3]));
        assert_eq!(fc_forward(&x, &id).unwrap().data(), x.data());

        let zero = LayerParams::new(
            Tensor::zeros(vec![1, 3]),
            Tensor::new(vec![1], vec![5.0]).unwrap(),
        );
        assert_eq!(fc_forward(&x, &zero).unwrap().data(), &[5.0]);
    }

    #[test]
    fn fc_rejects_length_mismatch() {
        let x = Tensor::<f32>::zeros(vec![4]);
        let params = LayerParams::zeros(vec![2, 3], 2);
        assert!(matches!(
            fc_forward(&x, &params),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::<f64>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let nonneg = Tensor::<f64>::new(vec![3], vec![0.5, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&nonneg), nonneg);
        let neg = Tensor::<f64>::new(vec![2], vec![-0.5, -2.0]).unwrap();
        assert_eq!(relu(&neg).data(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_backward_masks_nonpositive() {
        let pre = Tensor::<f64>::new(vec![4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        let g = Tensor::<f64>::filled(vec![4], 3.0);
        assert_eq!(relu_backward(&pre, &g).data(), &[0.0, 0.0, 3.0, 3.0]);

        let all_neg = Tensor::<f64>::new(vec![3], vec![-1.0, -0.1, -7.0]).unwrap();
        let g = Tensor::<f64>::filled(vec![3], 1.0);
        assert!(relu_backward(&all_neg, &g).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_uniform_logits() {
        let logits = Tensor::<f64>::zeros(vec![4]);
        let (loss, probs) = softmax_xent(&logits, 2).unwrap();
        for &p in probs.data() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_saturated_logit() {
        let logits = Tensor::<f64>::new(vec![3], vec![50.0, 0.0, 0.0]).unwrap();
        let (loss, probs) = softmax_xent(&logits, 0).unwrap();
        assert!(loss < 1e-15, "loss {loss}");
        assert!(probs.data()[0] > 1.0 - 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = Tensor::<f64>::new(vec![4], vec![0.3, -1.2, 2.5, 0.0]).unwrap();
        let shifted = logits.map(|v| v + 7.0);
        let (l0, p0) = softmax_xent(&logits, 1).unwrap();
        let (l1, p1) = softmax_xent(&shifted, 1).unwrap();
        assert!((l0 - l1).abs() < 1e-12);
        for (a, b) in p0.data().iter().zip(p1.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_bad_label() {
        let logits = Tensor::<f64>::zeros(vec![3]);
        assert!(matches!(
            softmax_xent(&logits, 3),
            Err(Error::Usage(_))
        ));
    }

    // Finite-difference oracles for the individual layer backwards. The
    // full-network check lives in the gradcheck module; these catch layer
    // bugs closer to the source.

    fn fd_check(f: impl Fn(&[f64]) -> f64, x: &mut [f64], analytic: &[f64], tol: f64) {
        let h = 1e-6;
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-12);
            let rel = (analytic[i] - numeric).abs() / denom;
            assert!(rel < tol, "entry {i}: analytic {} vs numeric {numeric}", analytic[i]);
        }
    }

    #[test]
    fn spectral_conv_gradients_match_finite_differences() {
        let mut rng = Pcg32::new(21, STREAM_CHECK);
        let patch = Tensor::<f64>::new(
            vec![2, 2, 6],
            (0..24).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let params = LayerParams::new(
            Tensor::new(vec![2, 2, 2, 3], (0..24).map(|_| rng.range_f64(-1.0, 1.0)).collect())
                .unwrap(),
            Tensor::new(vec![2], vec![0.1, -0.2]).unwrap(),
        );
        // Scalar objective: weighted sum of outputs.
        let weights: Vec<f64> = (0..4).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let objective = |p: &Tensor<f64>, prm: &LayerParams<f64>| {
            let out = conv_spectral_forward(p, prm, 2).unwrap();
            out.data().iter().zip(&weights).map(|(o, w)| o * w).sum::<f64>()
        };
        let d_out = Tensor::new(vec![2, 2], weights.clone()).unwrap();
        let (grads, d_patch) = conv_spectral_backward(&patch, &params, 2, &d_out, true).unwrap();

        let mut pv = patch.data().to_vec();
        let analytic = d_patch.unwrap();
        fd_check(
            |x| {
                let t = Tensor::new(vec![2, 2, 6], x.to_vec()).unwrap();
                objective(&t, &params)
            },
            &mut pv,
            analytic.data(),
            1e-6,
        );

        let mut w = params.weights.data().to_vec();
        fd_check(
            |x| {
                let prm = LayerParams::new(
                    Tensor::new(vec![2, 2, 2, 3], x.to_vec()).unwrap(),
                    params.biases.clone(),
                );
                objective(&patch, &prm)
            },
            &mut w,
            grads.weights.data(),
            1e-6,
        );
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut rng = Pcg32::new(22, STREAM_CHECK);
        let input = Tensor::<f64>::new(
            vec![5, 4],
            (0..20).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let params = LayerParams::new(
            Tensor::new(vec![2, 3, 3], (0..18).map(|_| rng.range_f64(-1.0, 1.0)).collect())
                .unwrap(),
            Tensor::new(vec![2], vec![0.3, -0.4]).unwrap(),
        );
        let weights: Vec<f64> = (0..3 * 2 * 2).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let objective = |inp: &Tensor<f64>, prm: &LayerParams<f64>| {
            let out = conv2d_forward(inp, prm, 1).unwrap();
            out.data().iter().zip(&weights).map(|(o, w)| o * w).sum::<f64>()
        };
        let d_out = Tensor::new(vec![3, 2, 2], weights.clone()).unwrap();
        let (grads, d_in) = conv2d_backward(&input, &params, 1, &d_out, true).unwrap();

        let mut x = input.data().to_vec();
        fd_check(
            |v| {
                let t = Tensor::new(vec![5, 4], v.to_vec()).unwrap();
                objective(&t, &params)
            },
            &mut x,
            d_in.unwrap().data(),
            1e-6,
        );
        let mut w = params.weights.data().to_vec();
        fd_check(
            |v| {
                let prm = LayerParams::new(
                    Tensor::new(vec![2, 3, 3], v.to_vec()).unwrap(),
                    params.biases.clone(),
                );
                objective(&input, &prm)
            },
            &mut w,
            grads.weights.data(),
            1e-6,
        );
    }

    #[test]
    fn fc_gradients_match_finite_differences() {
        let mut rng = Pcg32::new(23, STREAM_CHECK);
        let x = Tensor::<f64>::new(vec![5], (0..5).map(|_| rng.range_f64(-1.0, 1.0)).collect())
            .unwrap();
        let params = LayerParams::new(
            Tensor::new(vec![3, 5], (0..15).map(|_| rng.range_f64(-1.0, 1.0)).collect()).unwrap(),
            Tensor::new(vec![3], vec![0.1, 0.2, -0.3]).unwrap(),
        );
        let weights: Vec<f64> = (0..3).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let objective = |inp: &Tensor<f64>, prm: &LayerParams<f64>| {
            let out = fc_forward(inp, prm).unwrap();
            out.data().iter().zip(&weights).map(|(o, w)| o * w).sum::<f64>()
        };
        let d_out = Tensor::new(vec![3], weights.clone()).unwrap();
        let (grads, d_in) = fc_backward(&x, &params, &d_out, true).unwrap();

        let mut xv = x.data().to_vec();
        fd_check(
            |v| {
                let t = Tensor::new(vec![5], v.to_vec()).unwrap();
                objective(&t, &params)
            },
            &mut xv,
            d_in.unwrap().data(),
            1e-6,
        );
        let mut w = params.weights.data().to_vec();
        fd_check(
            |v| {
                let prm = LayerParams::new(
                    Tensor::new(vec![3, 5], v.to_vec()).unwrap(),
                    params.biases.clone(),
                );
                objective(&x, &prm)
            },
            &mut w,
            grads.weights.data(),
            1e-6,
        );
    }
}

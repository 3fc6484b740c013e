//! Generative contract tests for the numeric core and the data pipeline.

use proptest::prelude::*;

use hsicnn::data::{
    enumerate_samples, normalize_cube, stratified_split, HsiCube, LabelRaster,
};
use hsicnn::nn::{
    conv2d_forward, conv_spectral_forward, maxpool2d_backward, maxpool2d_forward, relu,
    reshape_stack, reshape_unstack, softmax_xent, LayerParams,
};
use hsicnn::tensor::Tensor;

fn finite_vec(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_probs_sum_to_one_and_lie_inside_unit_interval(
        logits in prop::collection::vec(-30.0f64..30.0, 2..16),
        label_pick in 0usize..16,
    ) {
        let label = label_pick % logits.len();
        let t = Tensor::from_vec(logits);
        let (loss, probs) = softmax_xent(&t, label).unwrap();
        let sum: f64 = probs.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        // Open interval in exact arithmetic; a dominant logit can round the
        // winning probability up to exactly 1.0 in f64.
        prop_assert!(probs.data().iter().all(|&p| p > 0.0 && p <= 1.0));
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn softmax_is_shift_invariant(
        logits in prop::collection::vec(-20.0f64..20.0, 2..12),
        shift in -50.0f64..50.0,
        label_pick in 0usize..12,
    ) {
        let label = label_pick % logits.len();
        let t = Tensor::from_vec(logits.clone());
        let shifted = Tensor::from_vec(logits.iter().map(|v| v + shift).collect());
        let (l0, p0) = softmax_xent(&t, label).unwrap();
        let (l1, p1) = softmax_xent(&shifted, label).unwrap();
        prop_assert!((l0 - l1).abs() < 1e-12, "{l0} vs {l1}");
        for (a, b) in p0.data().iter().zip(p1.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_prediction_loss_is_ln_class_count(classes in 2usize..32, label_pick in 0usize..32) {
        let label = label_pick % classes;
        let t = Tensor::<f64>::zeros(vec![classes]);
        let (loss, _) = softmax_xent(&t, label).unwrap();
        prop_assert!((loss - (classes as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn reshape_stack_is_a_bijection(
        rows in 1usize..12,
        cols in 1usize..12,
        raw in prop::collection::vec(-10.0f64..10.0, 144),
    ) {
        let t = Tensor::new(vec![rows, cols], raw[..rows * cols].to_vec()).unwrap();
        let stacked = reshape_stack(&t).unwrap();
        prop_assert_eq!(stacked.shape(), &[cols, rows]);
        // Element mapping: output[r][c] = input[c][r].
        for i in 0..rows {
            for j in 0..cols {
                prop_assert_eq!(stacked.at(&[j, i]), t.at(&[i, j]));
            }
        }
        let back = reshape_unstack(&stacked).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn maxpool_dominates_window_and_routes_gradient_to_argmax(
        h in 2usize..9,
        w in 2usize..9,
        c in 1usize..4,
        raw in prop::collection::vec(-5.0f64..5.0, 9 * 9 * 4),
    ) {
        let input = Tensor::new(vec![h, w, c], raw[..h * w * c].to_vec()).unwrap();
        let (pooled, argmax) = maxpool2d_forward(&input, 2, 2).unwrap();
        let (h2, w2) = (h / 2, w / 2);
        prop_assert_eq!(pooled.shape(), &[h2, w2, c]);
        for oy in 0..h2 {
            for ox in 0..w2 {
                for ch in 0..c {
                    let out = pooled.at(&[oy, ox, ch]);
                    for ky in 0..2 {
                        for kx in 0..2 {
                            let v = input.at(&[oy * 2 + ky, ox * 2 + kx, ch]);
                            prop_assert!(out >= v);
                        }
                    }
                }
            }
        }
        // Backward scatters each incoming value onto its argmax cell only.
        let g = Tensor::filled(pooled.shape().to_vec(), 1.0f64);
        let routed = maxpool2d_backward(input.shape(), &argmax, &g).unwrap();
        let nonzero = routed.data().iter().filter(|&&v| v != 0.0).count();
        prop_assert!(nonzero <= argmax.len());
        let total: f64 = routed.data().iter().sum();
        prop_assert!((total - g.len() as f64).abs() < 1e-9);
        for (k, &idx) in argmax.iter().enumerate() {
            prop_assert!(routed.data()[idx] > 0.0, "argmax {k} not routed");
        }
    }

    #[test]
    fn spectral_conv_is_linear_with_zero_bias(
        seedable in finite_vec(3 * 3 * 12, -2.0, 2.0),
        other in finite_vec(3 * 3 * 12, -2.0, 2.0),
        kernel in finite_vec(2 * 3 * 3 * 4, -1.0, 1.0),
        alpha in -3.0f64..3.0,
    ) {
        let x = Tensor::new(vec![3, 3, 12], seedable).unwrap();
        let y = Tensor::new(vec![3, 3, 12], other).unwrap();
        let params = LayerParams::new(
            Tensor::new(vec![2, 3, 3, 4], kernel).unwrap(),
            Tensor::zeros(vec![2]),
        );
        let f = |t: &Tensor<f64>| conv_spectral_forward(t, &params, 2).unwrap();

        let scaled = f(&x.map(|v| v * alpha));
        for (a, b) in scaled.data().iter().zip(f(&x).data()) {
            prop_assert!((a - alpha * b).abs() < 1e-10);
        }
        let summed_inputs = Tensor::new(
            vec![3, 3, 12],
            x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let lhs = f(&summed_inputs);
        for ((s, a), b) in lhs.data().iter().zip(f(&x).data()).zip(f(&y).data()) {
            prop_assert!((s - (a + b)).abs() < 1e-10);
        }
    }

    #[test]
    fn plane_conv_is_linear_with_zero_bias(
        x_raw in finite_vec(6 * 7, -2.0, 2.0),
        y_raw in finite_vec(6 * 7, -2.0, 2.0),
        kernel in finite_vec(3 * 3 * 3, -1.0, 1.0),
        alpha in -3.0f64..3.0,
    ) {
        let x = Tensor::new(vec![6, 7], x_raw).unwrap();
        let y = Tensor::new(vec![6, 7], y_raw).unwrap();
        let params = LayerParams::new(
            Tensor::new(vec![3, 3, 3], kernel).unwrap(),
            Tensor::zeros(vec![3]),
        );
        let f = |t: &Tensor<f64>| conv2d_forward(t, &params, 1).unwrap();
        let scaled = f(&x.map(|v| v * alpha));
        for (a, b) in scaled.data().iter().zip(f(&x).data()) {
            prop_assert!((a - alpha * b).abs() < 1e-10);
        }
        let summed = Tensor::new(
            vec![6, 7],
            x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        for ((s, a), b) in f(&summed).data().iter().zip(f(&x).data()).zip(f(&y).data()) {
            prop_assert!((s - (a + b)).abs() < 1e-10);
        }
    }

    #[test]
    fn relu_is_idempotent_and_nonnegative(raw in finite_vec(40, -5.0, 5.0)) {
        let t = Tensor::new(vec![8, 5], raw).unwrap();
        let once = relu(&t);
        prop_assert!(once.data().iter().all(|&v| v >= 0.0));
        prop_assert_eq!(relu(&once), once);
    }

    #[test]
    fn normalized_bands_hit_zero_mean_unit_variance(
        w in 4usize..12,
        h in 4usize..12,
        bands in 1usize..6,
        scale in 0.5f64..50.0,
        offset in -100.0f64..100.0,
        raw in prop::collection::vec(0.0f64..1.0, 12 * 12 * 6),
    ) {
        let n = w * h * bands;
        let values: Vec<f32> = raw[..n].iter().map(|v| (v * scale + offset) as f32).collect();
        let cube = HsiCube::new(w, h, bands, values).unwrap();
        let (norm, stats) = normalize_cube(&cube);
        let pixels = (w * h) as f64;
        for (b, stat) in stats.iter().enumerate() {
            if stat.std < 1e-12 {
                continue;
            }
            let mut sum = 0.0f64;
            let mut sq = 0.0f64;
            for y in 0..h {
                for x in 0..w {
                    let v = norm.value(x, y, b) as f64;
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / pixels;
            let var = sq / pixels - mean * mean;
            prop_assert!(mean.abs() < 1e-5, "band {b} mean {mean}");
            prop_assert!((var - 1.0).abs() < 1e-4, "band {b} var {var}");
        }
    }

    #[test]
    fn stratified_split_obeys_the_count_rule(
        class_sizes in prop::collection::vec(2usize..40, 2..8),
        ratio in 0.05f64..0.95,
        seed in 0u64..1000,
    ) {
        let total: usize = class_sizes.iter().sum();
        let mut labels = Vec::with_capacity(total);
        for (c, &n) in class_sizes.iter().enumerate() {
            labels.extend(std::iter::repeat_n((c + 1) as u8, n));
        }
        let raster = LabelRaster::new(total, 1, labels).unwrap();
        let samples = enumerate_samples(&raster).unwrap();
        let split = stratified_split(&samples, ratio, seed).unwrap();

        // Disjoint and covering.
        split.validate(&samples).unwrap();

        // Per-class counts follow floor(ratio * n) clamped to [1, n-1].
        let mut train_counts = vec![0usize; class_sizes.len()];
        for &i in &split.train {
            train_counts[samples.records()[i].class] += 1;
        }
        for (c, &n) in class_sizes.iter().enumerate() {
            let expected = ((ratio * n as f64).floor() as usize).clamp(1, n - 1);
            prop_assert_eq!(train_counts[c], expected, "class {}", c);
        }

        // Both sides contain every class.
        let mut test_counts = vec![0usize; class_sizes.len()];
        for &i in &split.test {
            test_counts[samples.records()[i].class] += 1;
        }
        for c in 0..class_sizes.len() {
            prop_assert!(train_counts[c] >= 1 && test_counts[c] >= 1);
        }
    }
}

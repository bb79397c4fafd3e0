//! Operator contracts: pinned identities, impulse responses, edge-window
//! semantics and the algebraic properties the block math relies on.

use nextvit::ops::{
    avg_pool2d, avg_pool2d_ceil, batch_norm_infer, concat_channels, conv2d, conv2d_direct,
    conv2d_im2col, gelu, global_avg_pool, layer_norm, linear, relu, slice_channels,
};
use nextvit::params::{BatchNormParams, ConvParams, LayerNormParams, LinearParams};
use nextvit::{Error, Shape, SplitMix64, Tensor};

type T64 = Tensor<f64>;

fn rand(shape: Shape, seed: u64) -> T64 {
    let mut rng = SplitMix64::new(seed);
    T64::random_normal(shape, &mut rng, 1.0)
}

fn max_diff(a: &T64, b: &T64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn conv_p(
    weight: Vec<f64>,
    co: usize,
    ci: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
) -> ConvParams<f64> {
    ConvParams {
        weight,
        out_channels: co,
        in_channels: ci,
        kernel: k,
        stride,
        padding: pad,
        groups,
        bias: None,
    }
}

#[test]
fn conv_identity_kernel_is_identity() {
    let x = rand(Shape::new(1, 3, 5, 5), 1);
    // 1x1 conv whose weight matrix is the identity over channels.
    let mut w = vec![0.0; 9];
    for c in 0..3 {
        w[c * 3 + c] = 1.0;
    }
    let y = conv2d(&x, &conv_p(w, 3, 3, 1, 1, 0, 1)).unwrap();
    assert!(max_diff(&x, &y) < 1e-15);
}

#[test]
fn conv_impulse_response_of_ones_kernel() {
    // One-hot input, all-ones 3x3 kernel, pad 1: the response is a 3x3 patch
    // of ones centered on the hot pixel (clipped at borders).
    let mut x = T64::zeros(Shape::new(1, 1, 5, 5));
    x.set(0, 0, 2, 2, 1.0);
    let y = conv2d(&x, &conv_p(vec![1.0; 9], 1, 1, 3, 1, 1, 1)).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let inside = (1..=3).contains(&i) && (1..=3).contains(&j);
            assert_eq!(y.at(0, 0, i, j), if inside { 1.0 } else { 0.0 }, "at ({i},{j})");
        }
    }
}

#[test]
fn grouped_conv_equals_sliced_dense_convs() {
    let x = rand(Shape::new(1, 4, 5, 5), 2);
    let w = rand(Shape::new(6, 2, 3, 3), 3).into_data();
    let grouped = conv2d(&x, &conv_p(w.clone(), 6, 4, 3, 1, 1, 2)).unwrap();

    // Two independent dense convs on channel halves, concatenated.
    let lo = slice_channels(&x, 0, 2).unwrap();
    let hi = slice_channels(&x, 2, 2).unwrap();
    let (w_lo, w_hi) = w.split_at(3 * 2 * 9);
    let y_lo = conv2d(&lo, &conv_p(w_lo.to_vec(), 3, 2, 3, 1, 1, 1)).unwrap();
    let y_hi = conv2d(&hi, &conv_p(w_hi.to_vec(), 3, 2, 3, 1, 1, 1)).unwrap();
    let stacked = concat_channels(&y_lo, &y_hi).unwrap();
    assert!(max_diff(&grouped, &stacked) < 1e-6);
}

#[test]
fn conv_is_linear_without_bias() {
    let p = conv_p(rand(Shape::new(4, 3, 3, 3), 4).into_data(), 4, 3, 3, 1, 1, 1);
    let x = rand(Shape::new(2, 3, 6, 6), 5);
    let y = rand(Shape::new(2, 3, 6, 6), 6);
    let (alpha, beta) = (0.7, -1.3);

    let mixed: Vec<f64> =
        x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect();
    let lhs = conv2d(&T64::from_vec(x.shape(), mixed).unwrap(), &p).unwrap();

    let cx = conv2d(&x, &p).unwrap();
    let cy = conv2d(&y, &p).unwrap();
    let rhs: Vec<f64> =
        cx.data().iter().zip(cy.data()).map(|(a, b)| alpha * a + beta * b).collect();
    let rhs = T64::from_vec(cx.shape(), rhs).unwrap();
    assert!(max_diff(&lhs, &rhs) < 1e-5);
}

#[test]
fn conv_both_algorithms_agree() {
    let x = rand(Shape::new(2, 4, 7, 7), 7);
    let p = conv_p(rand(Shape::new(6, 2, 3, 3), 8).into_data(), 6, 4, 3, 2, 1, 2);
    let a = conv2d_direct(&x, &p).unwrap();
    let b = conv2d_im2col(&x, &p, 1).unwrap();
    assert!(max_diff(&a, &b) < 1e-12);
}

#[test]
fn conv_error_paths() {
    let x = rand(Shape::new(1, 3, 5, 5), 9);
    // Channel mismatch.
    let p = conv_p(vec![0.0; 4 * 9], 4, 1, 3, 1, 1, 1);
    assert!(matches!(conv2d(&x, &p), Err(Error::ShapeMismatch(_))));
    // Groups must divide both channel counts.
    let p = conv_p(vec![0.0; 4 * 9], 4, 3, 3, 1, 1, 2);
    assert!(matches!(conv2d(&x, &p), Err(Error::GroupMismatch(_))));
    // Kernel larger than padded input.
    let p = conv_p(vec![0.0; 3 * 3 * 49], 3, 3, 7, 1, 0, 1);
    assert!(matches!(conv2d(&rand(Shape::new(1, 3, 5, 5), 10), &p), Err(Error::ShapeMismatch(_))));
}

#[test]
fn avg_pool_identity_constant_and_ramp() {
    let x = rand(Shape::new(1, 2, 4, 4), 11);
    let same = avg_pool2d(&x, 1, 1).unwrap();
    assert!(max_diff(&x, &same) < 1e-15);

    let c = T64::full(Shape::new(1, 1, 4, 4), 2.5);
    let pooled = avg_pool2d(&c, 2, 2).unwrap();
    assert!(pooled.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));

    let ramp = T64::from_vec(Shape::new(1, 1, 4, 4), (0..16).map(|v| v as f64).collect()).unwrap();
    let pooled = avg_pool2d(&ramp, 2, 2).unwrap();
    // Window means computed by hand: rows (0 1 / 4 5) etc.
    assert_eq!(pooled.data(), &[2.5, 4.5, 10.5, 12.5]);
}

#[test]
fn avg_pool_preserves_global_mean_when_exact() {
    let x = rand(Shape::new(2, 3, 8, 8), 12);
    let pooled = avg_pool2d(&x, 2, 2).unwrap();
    let mean = |t: &T64| t.data().iter().sum::<f64>() / t.numel() as f64;
    assert!((mean(&x) - mean(&pooled)).abs() < 1e-6);
}

#[test]
fn ceil_mode_averages_only_valid_elements() {
    // 5 columns, k = stride = 2: the last window covers a single column and
    // averages only the two elements it actually sees.
    let x = T64::from_vec(
        Shape::new(1, 1, 2, 5),
        vec![1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0, 17.0, 19.0],
    )
    .unwrap();
    let y = avg_pool2d_ceil(&x, 2, 2).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 1, 3));
    assert_eq!(y.data(), &[7.0, 11.0, 14.0]);

    // Floor mode drops the ragged tail instead.
    let y = avg_pool2d(&x, 2, 2).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 1, 2));
    assert_eq!(y.data(), &[7.0, 11.0]);

    let x = rand(Shape::new(1, 2, 7, 7), 13);
    assert_eq!(avg_pool2d_ceil(&x, 2, 2).unwrap().shape(), Shape::new(1, 2, 4, 4));
}

#[test]
fn pool_window_larger_than_input_errors() {
    let x = rand(Shape::new(1, 1, 3, 3), 14);
    assert!(matches!(avg_pool2d(&x, 4, 4), Err(Error::ShapeMismatch(_))));
}

#[test]
fn global_avg_pool_constant_and_squeeze() {
    let c = T64::full(Shape::new(2, 3, 4, 4), -1.25);
    let y = global_avg_pool(&c).unwrap();
    assert_eq!((y.rows(), y.cols()), (2, 3));
    assert!(y.data().iter().all(|&v| (v + 1.25).abs() < 1e-15));

    let x = rand(Shape::new(2, 5, 1, 1), 15);
    let y = global_avg_pool(&x).unwrap();
    assert!(y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn batch_norm_pinned_cases_and_linearity() {
    let x = rand(Shape::new(1, 3, 4, 4), 16);
    let near_id = BatchNormParams::identity(3, 1e-5);
    let y = batch_norm_infer(&x, &near_id).unwrap();
    let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b * scale).abs() < 1e-12);
    }

    let mut squash = BatchNormParams::identity(3, 1e-5);
    squash.gamma = vec![0.0; 3];
    squash.beta = vec![0.5, -0.5, 2.0];
    let y = batch_norm_infer(&x, &squash).unwrap();
    for c in 0..3 {
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(y.at(0, c, i, j), squash.beta[c]);
            }
        }
    }

    // bn(x) - bn(0) is linear in x even though bn itself is affine.
    let mut rng = SplitMix64::new(17);
    let p = BatchNormParams {
        gamma: T64::random_normal(Shape::new(1, 1, 1, 3), &mut rng, 1.0).into_data(),
        beta: T64::random_normal(Shape::new(1, 1, 1, 3), &mut rng, 1.0).into_data(),
        running_mean: T64::random_normal(Shape::new(1, 1, 1, 3), &mut rng, 1.0).into_data(),
        running_var: vec![0.7, 1.3, 0.4],
        eps: 1e-5,
    };
    let zero = T64::zeros(x.shape());
    let bn0 = batch_norm_infer(&zero, &p).unwrap();
    let centered = |t: &T64| -> T64 {
        let bn = batch_norm_infer(t, &p).unwrap();
        let d: Vec<f64> = bn.data().iter().zip(bn0.data()).map(|(a, b)| a - b).collect();
        T64::from_vec(t.shape(), d).unwrap()
    };
    let a = rand(x.shape(), 18);
    let b = rand(x.shape(), 19);
    let summed: Vec<f64> = a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect();
    let lhs = centered(&T64::from_vec(x.shape(), summed).unwrap());
    let rhs_a = centered(&a);
    let rhs_b = centered(&b);
    for i in 0..lhs.numel() {
        assert!((lhs.data()[i] - rhs_a.data()[i] - rhs_b.data()[i]).abs() < 1e-6);
    }
}

#[test]
fn activations_pinned_values() {
    let x = T64::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    let g = gelu(&x);
    assert_eq!(g.data()[1], 0.0);
    assert!(g.data()[0] < 0.0 && g.data()[0] > -0.2);
    assert!((g.data()[2] - 2.0).abs() < 0.05);
}

#[test]
fn layer_norm_constant_channels_give_beta() {
    // Constant across the normalized (channel) axis: variance is zero, the
    // eps guard keeps it finite, and the output collapses to beta.
    let x = T64::full(Shape::new(1, 4, 2, 2), 3.0);
    let p = LayerNormParams { gamma: vec![1.0; 4], beta: vec![0.25; 4], eps: 1e-5 };
    let y = layer_norm(&x, &p).unwrap();
    assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-9));
}

#[test]
fn linear_identity_and_bias_broadcast() {
    let x = rand(Shape::mat(3, 4), 20);
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 4 + i] = 1.0;
    }
    let p = LinearParams { weight: eye, out_features: 4, in_features: 4, bias: None };
    let y = linear(&x, &p).unwrap();
    assert!(max_diff(&x, &y) < 1e-15);

    let p = LinearParams {
        weight: vec![0.0; 8],
        out_features: 2,
        in_features: 4,
        bias: Some(vec![1.5, -2.5]),
    };
    let y = linear(&x, &p).unwrap();
    for r in 0..3 {
        assert_eq!(y.mat_at(r, 0), 1.5);
        assert_eq!(y.mat_at(r, 1), -2.5);
    }
}

//! Kernel correctness against independent brute-force references.

use camforge_core::nn::kernels;
use camforge_core::rng;
use camforge_core::tensor::{Shape, Tensor};
use camforge_testkit as tk;
use rand::Rng;

fn rand_vec(len: usize, lo: f32, hi: f32, tag: &str, idx: u64) -> Vec<f32> {
    let mut r = rng::stream(99, tag, idx);
    (0..len).map(|_| r.random_range(lo..hi)).collect()
}

fn assert_close(a: &[f32], b: &[f32], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        assert!(
            (x as f64 - y as f64).abs() <= tol,
            "{what}[{i}]: {x} vs {y}"
        );
    }
}

#[test]
fn conv_identity_kernel_is_identity() {
    let input = rand_vec(16, -1.0, 1.0, "conv-id", 0);
    let ishape = Shape::new(1, 1, 4, 4);
    let (out, oshape) = kernels::conv2d_forward(
        &input,
        ishape,
        &[1.0],
        Shape::new(1, 1, 1, 1),
        Some(&[0.0]),
        1,
        0,
    )
    .unwrap();
    assert_eq!(oshape, ishape);
    assert_eq!(out, input);
}

#[test]
fn conv_zero_kernel_annihilates() {
    let input = rand_vec(32, -1.0, 1.0, "conv-zero", 0);
    let (out, _) = kernels::conv2d_forward(
        &input,
        Shape::new(1, 2, 4, 4),
        &vec![0.0; 2 * 2 * 9],
        Shape::new(2, 2, 3, 3),
        Some(&[0.0, 0.0]),
        1,
        1,
    )
    .unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn conv_matches_naive_loop_reference() {
    for (case, (n, ci, h, w, co, k, stride, padding)) in [
        (0u64, (1usize, 1usize, 4usize, 4usize, 1usize, 3usize, 1usize, 0usize)),
        (1, (2, 3, 6, 5, 4, 3, 1, 1)),
        (2, (1, 2, 8, 8, 3, 3, 2, 1)),
        (3, (2, 4, 5, 7, 2, 1, 1, 0)),
        (4, (1, 1, 7, 7, 2, 5, 2, 2)),
    ] {
        let input = rand_vec(n * ci * h * w, -1.0, 1.0, "conv-in", case);
        let weight = rand_vec(co * ci * k * k, -1.0, 1.0, "conv-w", case);
        let bias = rand_vec(co, -0.5, 0.5, "conv-b", case);
        let (out, oshape) = kernels::conv2d_forward(
            &input,
            Shape::new(n, ci, h, w),
            &weight,
            Shape::new(co, ci, k, k),
            Some(&bias),
            stride,
            padding,
        )
        .unwrap();
        let expect = tk::conv2d_naive(&input, n, ci, h, w, &weight, co, k, k, &bias, stride, padding);
        assert_eq!(oshape.h, tk::conv_out_dim(h, k, stride, padding));
        assert_close(&out, &expect, 1e-5, &format!("conv case {case}"));
    }
}

#[test]
fn conv_shape_mismatch_is_descriptive() {
    let err = kernels::conv2d_forward(
        &[0.0; 16],
        Shape::new(1, 1, 4, 4),
        &[0.0; 18],
        Shape::new(1, 2, 3, 3),
        None,
        1,
        0,
    )
    .unwrap_err();
    assert!(err.to_string().contains("channels"), "{err}");
}

#[test]
fn transposed_conv_identity_kernel() {
    let input = rand_vec(16, -1.0, 1.0, "tconv-id", 0);
    let (out, oshape) = kernels::transposed_conv2d_forward(
        &input,
        Shape::new(1, 1, 4, 4),
        &[1.0],
        Shape::new(1, 1, 1, 1),
        Some(&[0.0]),
        1,
        0,
    )
    .unwrap();
    assert_eq!(oshape, Shape::new(1, 1, 4, 4));
    assert_eq!(out, input);
}

#[test]
fn transposed_conv_matches_naive_reference() {
    for (case, (n, ci, h, w, co, k, stride, padding)) in [
        (0u64, (1usize, 1usize, 3usize, 3usize, 1usize, 3usize, 1usize, 1usize)),
        (1, (2, 4, 4, 4, 2, 3, 1, 1)),
        (2, (1, 2, 3, 4, 3, 2, 2, 0)),
        (3, (1, 3, 5, 5, 2, 3, 2, 1)),
    ] {
        let input = rand_vec(n * ci * h * w, -1.0, 1.0, "tconv-in", case);
        let weight = rand_vec(ci * co * k * k, -1.0, 1.0, "tconv-w", case);
        let bias = rand_vec(co, -0.5, 0.5, "tconv-b", case);
        let (out, _) = kernels::transposed_conv2d_forward(
            &input,
            Shape::new(n, ci, h, w),
            &weight,
            Shape::new(ci, co, k, k),
            Some(&bias),
            stride,
            padding,
        )
        .unwrap();
        let expect = tk::transposed_conv2d_naive(
            &input, n, ci, h, w, &weight, co, k, k, &bias, stride, padding,
        );
        assert_close(&out, &expect, 1e-5, &format!("tconv case {case}"));
    }
}

#[test]
fn maxpool_examples_and_reference() {
    // Constant field pools to the same constant.
    let (out, _, _) = kernels::maxpool2d_forward(&[0.7; 36], Shape::new(1, 1, 6, 6), 3, 2, 1).unwrap();
    assert!(out.iter().all(|&v| v == 0.7));

    // k = 1, stride 1 is the identity.
    let input = rand_vec(16, -1.0, 1.0, "pool-id", 0);
    let (out, oshape, _) =
        kernels::maxpool2d_forward(&input, Shape::new(1, 1, 4, 4), 1, 1, 0).unwrap();
    assert_eq!(oshape, Shape::new(1, 1, 4, 4));
    assert_eq!(out, input);

    // Distinct 4x4 values, 2x2 stride-2 windows, against enumeration.
    let mut vals: Vec<f32> = (0..16).map(|i| i as f32).collect();
    let mut r = rng::stream(3, "pool-shuffle", 0);
    use rand::seq::SliceRandom;
    vals.shuffle(&mut r);
    let (out, _, _) = kernels::maxpool2d_forward(&vals, Shape::new(1, 1, 4, 4), 2, 2, 0).unwrap();
    let expect = tk::maxpool2d_naive(&vals, 1, 1, 4, 4, 2, 2);
    assert_eq!(out, expect);

    // Window larger than the padded input is a shape error.
    assert!(kernels::maxpool2d_forward(&vals, Shape::new(1, 1, 4, 4), 7, 1, 1).is_err());
}

#[test]
fn maxpool_ties_route_to_first_occurrence() {
    let input = vec![0.5, 0.5, 0.5, 0.5];
    let (_, oshape, argmax) =
        kernels::maxpool2d_forward(&input, Shape::new(1, 1, 2, 2), 2, 2, 0).unwrap();
    assert_eq!(argmax, vec![0]);
    let dinput = kernels::maxpool2d_backward(&argmax, &[1.0], oshape, Shape::new(1, 1, 2, 2));
    assert_eq!(dinput, vec![1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn batch_stats_match_two_pass_reference() {
    let shape = Shape::new(2, 3, 4, 4);
    let input = rand_vec(shape.count(), -2.0, 2.0, "bn", 0);
    let (mean, var) = kernels::batch_stats(&input, shape);
    let (em, ev) = tk::batch_stats_two_pass(&input, 2, 3, 4, 4);
    for c in 0..3 {
        assert!((mean[c] - em[c]).abs() < 1e-9);
        assert!((var[c] - ev[c]).abs() < 1e-9);
    }
}

#[test]
fn bn_training_normalizes_and_eval_identity_passes_through() {
    let shape = Shape::new(2, 3, 4, 4);
    let input = rand_vec(shape.count(), -2.0, 2.0, "bn-train", 1);
    let (mean, var) = kernels::batch_stats(&input, shape);
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + 1e-5).sqrt()).collect();
    let out = kernels::bn_apply(&input, shape, &mean, &inv_std, &[1.0; 3], &[0.0; 3]);
    let (om, ov) = kernels::batch_stats(&out, shape);
    for c in 0..3 {
        assert!(om[c].abs() < 1e-4, "channel {c} mean {}", om[c]);
        assert!((ov[c] - 1.0).abs() < 1e-3, "channel {c} var {}", ov[c]);
    }
    // Eval with running stats (0, 1) and identity scale/shift.
    let out = kernels::bn_apply(&input, shape, &[0.0; 3], &[1.0 / (1.0f64 + 1e-5).sqrt(); 3], &[1.0; 3], &[0.0; 3]);
    assert_close(&out, &input, 1e-4, "bn eval identity");
}

#[test]
fn gap_examples_and_summation_reference() {
    let (out, oshape) = kernels::gap_forward(&[0.3; 24], Shape::new(1, 2, 3, 4));
    assert_eq!(oshape, Shape::new(1, 2, 1, 1));
    assert!(out.iter().all(|&v| (v - 0.3).abs() < 1e-7));

    let (out, _) = kernels::gap_forward(&[1.0, 2.0, 3.0, 4.0], Shape::new(1, 1, 2, 2));
    assert_eq!(out, vec![2.5]);

    let input = rand_vec(2 * 3 * 5 * 7, -1.0, 1.0, "gap", 0);
    let (out, _) = kernels::gap_forward(&input, Shape::new(2, 3, 5, 7));
    let expect = tk::gap_naive(&input, 2, 3, 5, 7);
    assert_close(&out, &expect, 1e-6, "gap");
}

#[test]
fn softmax_channel_symmetry_and_normalization() {
    let (n, c, h, w) = (1, 2, 1, 1);
    let out = kernels::softmax_channel_forward(&[0.0, 0.0], Shape::new(n, c, h, w));
    assert_close(&out, &[0.5, 0.5], 1e-7, "softmax symmetry");

    let shape = Shape::new(2, 3, 4, 4);
    let input = rand_vec(shape.count(), -5.0, 5.0, "softmax", 0);
    let out = kernels::softmax_channel_forward(&input, shape);
    assert!(out.iter().all(|&v| v >= 0.0));
    let hw = 16;
    for n in 0..2 {
        for p in 0..hw {
            let sum: f64 = (0..3).map(|ch| out[(n * 3 + ch) * hw + p] as f64).sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn bilinear_resize_preserves_constants_and_linear_ramps() {
    // Constant field.
    let (out, _) = kernels::resize_bilinear_forward(&[0.4; 25], Shape::new(1, 1, 5, 5), 9, 13).unwrap();
    assert!(out.iter().all(|&v| (v - 0.4).abs() < 1e-6));

    // Bilinear interpolation reproduces a linear function exactly at
    // interior points (away from clamped borders).
    let (ih, iw, oh, ow) = (8usize, 6usize, 16usize, 9usize);
    let f = |y: f64, x: f64| 0.2 + 0.3 * x + 0.55 * y;
    let input: Vec<f32> = (0..ih * iw)
        .map(|i| f((i / iw) as f64, (i % iw) as f64) as f32)
        .collect();
    let (out, _) = kernels::resize_bilinear_forward(&input, Shape::new(1, 1, ih, iw), oh, ow).unwrap();
    for oy in 2..oh - 2 {
        for ox in 2..ow - 2 {
            let sy = (oy as f64 + 0.5) * ih as f64 / oh as f64 - 0.5;
            let sx = (ox as f64 + 0.5) * iw as f64 / ow as f64 - 0.5;
            let expect = f(sy, sx);
            let got = out[oy * ow + ox] as f64;
            assert!((got - expect).abs() < 1e-5, "({oy},{ox}): {got} vs {expect}");
        }
    }
}

#[test]
fn nearest_upsample_duplicates_pixels() {
    let input = vec![1.0, 2.0, 3.0, 4.0];
    let (out, oshape) = kernels::upsample_nearest2_forward(&input, Shape::new(1, 1, 2, 2));
    assert_eq!(oshape, Shape::new(1, 1, 4, 4));
    assert_eq!(
        out,
        vec![1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
    );
}

#[test]
fn concat_and_crop_shapes() {
    let a = rand_vec(8, 0.0, 1.0, "cat-a", 0);
    let b = rand_vec(16, 0.0, 1.0, "cat-b", 0);
    let (out, oshape) = kernels::concat_channels_forward(
        &a,
        Shape::new(1, 2, 2, 2),
        &b,
        Shape::new(1, 4, 2, 2),
    )
    .unwrap();
    assert_eq!(oshape, Shape::new(1, 6, 2, 2));
    assert_eq!(&out[..8], &a[..]);
    assert_eq!(&out[8..], &b[..]);

    let input: Vec<f32> = (0..25).map(|i| i as f32).collect();
    let (cropped, cshape) = kernels::center_crop_forward(&input, Shape::new(1, 1, 5, 5), 3, 3).unwrap();
    assert_eq!(cshape, Shape::new(1, 1, 3, 3));
    assert_eq!(cropped, vec![6., 7., 8., 11., 12., 13., 16., 17., 18.]);
    assert!(kernels::center_crop_forward(&input, Shape::new(1, 1, 5, 5), 6, 3).is_err());
}

#[test]
fn linear_matches_dot_products() {
    let input = rand_vec(2 * 5, -1.0, 1.0, "lin-x", 0);
    let weight = rand_vec(3 * 5, -1.0, 1.0, "lin-w", 0);
    let bias = rand_vec(3, -0.5, 0.5, "lin-b", 0);
    let (out, oshape) = kernels::linear_forward(
        &input,
        Shape::new(2, 5, 1, 1),
        &weight,
        Shape::new(3, 5, 1, 1),
        Some(&bias),
    )
    .unwrap();
    assert_eq!(oshape, Shape::new(2, 3, 1, 1));
    for n in 0..2 {
        for c in 0..3 {
            let mut acc = bias[c] as f64;
            for k in 0..5 {
                acc += input[n * 5 + k] as f64 * weight[c * 5 + k] as f64;
            }
            assert!((out[n * 3 + c] as f64 - acc).abs() < 1e-6);
        }
    }
}

//! Production mean-field inference against the written-out O(N^2)
//! reference loop, plus the degenerate-case contracts.

use camforge_core::cam::Cam;
use camforge_core::crf::{mean_field, refine_mask, unary_from_cam, CrfParams, UnaryField};
use camforge_core::rng;
use camforge_core::tensor::{Shape, Tensor};
use camforge_testkit::{mean_field_naive, NaiveCrfParams};
use rand::Rng;

fn random_problem(idx: u64) -> (UnaryField, Tensor, usize, usize, usize) {
    let mut r = rng::stream(55, "crf-problem", idx);
    let h = r.random_range(2..=8);
    let w = r.random_range(2..=8);
    let classes = r.random_range(2..=3);
    let mut probs = Vec::with_capacity(h * w * classes);
    for _ in 0..h * w {
        let raw: Vec<f64> = (0..classes).map(|_| r.random_range(0.05..1.0)).collect();
        let z: f64 = raw.iter().sum();
        for v in raw {
            probs.push((v / z) as f32);
        }
    }
    let unary = UnaryField::from_probs(h, w, classes, &probs).unwrap();
    let image = Tensor::rand_uniform(
        Shape::new(1, 1, h, w),
        0.0,
        1.0,
        &mut rng::stream(55, "crf-image", idx),
    );
    (unary, image, h, w, classes)
}

fn random_params(idx: u64, iterations: usize) -> CrfParams {
    let mut r = rng::stream(55, "crf-params", idx);
    CrfParams {
        iterations,
        w_app: r.random_range(0.0..2.0),
        theta_alpha: r.random_range(0.5..12.0),
        theta_beta: r.random_range(0.05..0.5),
        w_smooth: r.random_range(0.0..2.0),
        theta_gamma: r.random_range(0.5..6.0),
        unary_clip: 0.05,
    }
}

/// 20 random problems, checked after every one of 10 iterations.
#[test]
fn production_matches_naive_reference_per_iteration() {
    for idx in 0..20u64 {
        let (unary, image, h, w, classes) = random_problem(idx);
        for iters in 1..=10usize {
            let params = random_params(idx, iters);
            let got = mean_field(&unary, &image, &params).unwrap();
            let expect = mean_field_naive(
                unary.neg_log(),
                image.data(),
                h,
                w,
                classes,
                &NaiveCrfParams {
                    iterations: iters,
                    w_app: params.w_app as f64,
                    theta_alpha: params.theta_alpha as f64,
                    theta_beta: params.theta_beta as f64,
                    w_smooth: params.w_smooth as f64,
                    theta_gamma: params.theta_gamma as f64,
                },
            );
            for (i, (&a, &b)) in got.q.iter().zip(&expect).enumerate() {
                assert!(
                    (a as f64 - b as f64).abs() < 1e-6,
                    "problem {idx}, {iters} iterations, entry {i}: {a} vs {b}"
                );
            }
        }
    }
}

/// Zero pairwise weights: the output argmax equals the unary argmax,
/// exactly, on 100 random problems.
#[test]
fn zero_pairwise_weights_preserve_unary_argmax() {
    for idx in 100..200u64 {
        let (unary, image, h, w, classes) = random_problem(idx);
        let params = CrfParams {
            w_app: 0.0,
            w_smooth: 0.0,
            ..random_params(idx, 5)
        };
        let out = mean_field(&unary, &image, &params).unwrap();
        for pix in 0..h * w {
            let unary_best = (0..classes)
                .min_by(|&a, &b| {
                    unary.neg_log()[pix * classes + a]
                        .partial_cmp(&unary.neg_log()[pix * classes + b])
                        .unwrap()
                })
                .unwrap();
            let q_best = (0..classes)
                .max_by(|&a, &b| {
                    out.q[pix * classes + a]
                        .partial_cmp(&out.q[pix * classes + b])
                        .unwrap()
                })
                .unwrap();
            assert_eq!(unary_best, q_best, "problem {idx}, pixel {pix}");
        }
    }
}

/// Zero iterations: Q is softmax(-unary) within 1e-6.
#[test]
fn zero_iterations_yield_softmax_of_negated_unary() {
    for idx in 200..240u64 {
        let (unary, image, h, w, classes) = random_problem(idx);
        let params = CrfParams {
            iterations: 0,
            ..random_params(idx, 0)
        };
        let out = mean_field(&unary, &image, &params).unwrap();
        for pix in 0..h * w {
            let mut exps = vec![0f64; classes];
            let mut z = 0f64;
            for l in 0..classes {
                exps[l] = (-(unary.neg_log()[pix * classes + l] as f64)).exp();
                z += exps[l];
            }
            for l in 0..classes {
                let expect = exps[l] / z;
                let got = out.q[pix * classes + l] as f64;
                assert!((got - expect).abs() < 1e-6, "problem {idx} pixel {pix}");
            }
        }
    }
}

/// A seed that exactly matches a high-contrast blob is a stable fixed
/// point of the refinement.
#[test]
fn high_contrast_blob_seed_is_stable() {
    let (h, w) = (16, 16);
    let mut image = vec![0.1f32; h * w];
    let mut cam_values = vec![0.05f32; h * w];
    for y in 5..11 {
        for x in 5..11 {
            image[y * w + x] = 0.9;
            cam_values[y * w + x] = 0.92;
        }
    }
    let cam = Cam::new(1, h, w, cam_values, 1.0).unwrap();
    let seed = camforge_core::cam::threshold(&cam, camforge_core::cam::ThresholdConfig::LARGE_LESION).unwrap();
    let image = Tensor::from_vec(Shape::new(1, 1, h, w), image).unwrap();
    let params = CrfParams {
        theta_alpha: 20.0,
        ..CrfParams::default()
    };
    let refined = refine_mask(&seed, &cam, &image, &params).unwrap();
    assert_eq!(refined.labels, seed.labels);
}

/// Images past the 64x64 cutoff take the truncated-window path. With
/// bandwidths large enough that every 3-theta window covers the whole
/// image, truncation discards nothing and the windowed path must agree
/// with the untruncated naive reference.
#[test]
fn windowed_path_matches_naive_when_windows_cover_the_image() {
    let (h, w, classes) = (66usize, 66usize, 2usize);
    let mut r = rng::stream(56, "crf-window", 0);
    let mut probs = Vec::with_capacity(h * w * classes);
    for _ in 0..h * w {
        let p = r.random_range(0.1..0.9f64);
        probs.push(p as f32);
        probs.push((1.0 - p) as f32);
    }
    let unary = UnaryField::from_probs(h, w, classes, &probs).unwrap();
    let image = Tensor::rand_uniform(
        Shape::new(1, 1, h, w),
        0.0,
        1.0,
        &mut rng::stream(56, "crf-window-img", 0),
    );
    // 3 * 40 = 120 exceeds the 94-pixel diagonal.
    let params = CrfParams {
        iterations: 2,
        w_app: 1.5,
        theta_alpha: 40.0,
        theta_beta: 0.3,
        w_smooth: 0.7,
        theta_gamma: 35.0,
        unary_clip: 0.05,
    };
    let got = mean_field(&unary, &image, &params).unwrap();
    let expect = mean_field_naive(
        unary.neg_log(),
        image.data(),
        h,
        w,
        classes,
        &NaiveCrfParams {
            iterations: 2,
            w_app: 1.5,
            theta_alpha: 40.0,
            theta_beta: 0.3,
            w_smooth: 0.7,
            theta_gamma: 35.0,
        },
    );
    for (i, (&a, &b)) in got.q.iter().zip(&expect).enumerate() {
        assert!((a as f64 - b as f64).abs() < 1e-6, "entry {i}: {a} vs {b}");
    }
}

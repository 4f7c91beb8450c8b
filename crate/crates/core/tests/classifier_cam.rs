//! Classifier/CAM cross-module contracts: the activation-map identity,
//! multi-scale inference, and end-to-end learnability on a separable toy
//! set.

use camforge_core::cam::{compute_cam, fuse, multi_scale_cams, normalize, ScaleSet};
use camforge_core::classifier::{
    evaluate_accuracy, train_classifier, ClassifierConfig, ClassifierModel, TrainConfig,
};
use camforge_core::rng;
use camforge_core::tensor::{Shape, Tensor};
use camforge_core::Error;

fn tiny_model(seed: u64) -> ClassifierModel {
    ClassifierModel::new(
        ClassifierConfig {
            in_channels: 1,
            num_classes: 2,
            channels: vec![4, 8],
        },
        seed,
    )
    .unwrap()
}

/// The mean of the class activation map equals the pre-softmax class
/// score: the GAP head makes the two score paths algebraically equal.
#[test]
fn cam_mean_equals_logit_on_random_models() {
    for idx in 0..100u64 {
        let model = tiny_model(idx);
        let mut r = rng::stream(77, "cam-id-img", idx);
        let size = 8 * (1 + (idx % 3) as usize);
        let image = Tensor::rand_uniform(Shape::new(1, 1, size, size), 0.0, 1.0, &mut r);
        let out = model.classify(&image).unwrap();
        for class in 0..2 {
            let cam = compute_cam(&out.features, model.head_weight(), class).unwrap();
            let diff = (cam.mean() - out.logits[class] as f64).abs();
            assert!(diff < 1e-5, "model {idx}, class {class}: |{diff}|");
        }
    }
}

#[test]
fn single_scale_equals_direct_computation() {
    let model = tiny_model(5);
    let image = Tensor::rand_uniform(
        Shape::new(1, 1, 16, 16),
        0.0,
        1.0,
        &mut rng::stream(78, "ms", 0),
    );
    let cams = multi_scale_cams(&model, &image, &ScaleSet::new(vec![1.0]).unwrap(), 1).unwrap();
    assert_eq!(cams.len(), 1);
    let direct = compute_cam(
        &model.classify(&image).unwrap().features,
        model.head_weight(),
        1,
    )
    .unwrap();
    // Same native extent here (16x16 image, 4x4 features): the only
    // difference is the resize back, which must reproduce values at the
    // feature grid exactly on a constant map... compare post-resize mean
    // against the feature-level mean instead (resize preserves means of
    // constant fields; for general fields compare the tagged scale).
    assert_eq!(cams[0].scale, 1.0);
    assert_eq!((cams[0].h, cams[0].w), (16, 16));
    assert!((cams[0].mean() - direct.mean()).abs() < 1e-4);
}

#[test]
fn four_scales_all_return_original_extent() {
    let model = tiny_model(6);
    let image = Tensor::rand_uniform(
        Shape::new(1, 1, 24, 24),
        0.0,
        1.0,
        &mut rng::stream(79, "ms4", 0),
    );
    let cams = multi_scale_cams(&model, &image, &ScaleSet::default(), 1).unwrap();
    assert_eq!(cams.len(), 4);
    let scales: Vec<f32> = cams.iter().map(|c| c.scale).collect();
    assert_eq!(scales, vec![0.5, 1.0, 1.5, 2.0]);
    for cam in &cams {
        assert_eq!((cam.h, cam.w), (24, 24));
    }
}

/// A constant image is translation-free, so away from padding border
/// effects every scale computes the same activations. At 128x128 the
/// center cell's receptive field stays interior at all four scales, and
/// the center CAM values must agree across scales.
#[test]
fn constant_image_gives_scale_invariant_cams() {
    let model = tiny_model(7);
    let image = Tensor::full(Shape::new(1, 1, 128, 128), 0.5);
    let cams = multi_scale_cams(&model, &image, &ScaleSet::default(), 1).unwrap();
    let center = 64 * 128 + 64;
    let reference = cams[1].values[center];
    for cam in &cams {
        let v = cam.values[center];
        assert!(
            (v - reference).abs() < 1e-5 * reference.abs().max(1.0),
            "scale {}: {v} vs {reference}",
            cam.scale
        );
    }
    let fused = fuse(&cams).unwrap();
    assert_eq!((fused.h, fused.w), (128, 128));
}

#[test]
fn scales_below_backbone_minimum_name_the_offender() {
    let model = tiny_model(8);
    let image = Tensor::zeros(Shape::new(1, 1, 16, 16));
    let err = multi_scale_cams(&model, &image, &ScaleSet::new(vec![1.0, 0.1]).unwrap(), 1)
        .unwrap_err();
    match err {
        Error::Config(msg) => assert!(msg.contains("0.1"), "{msg}"),
        other => panic!("expected a configuration error, got {other}"),
    }
}

/// Fusion is permutation-invariant and normalization idempotent; checked
/// here on real CAMs (property tests cover synthetic ones).
#[test]
fn fusion_permutation_invariance_on_real_cams() {
    let model = tiny_model(9);
    let image = Tensor::rand_uniform(
        Shape::new(1, 1, 16, 16),
        0.0,
        1.0,
        &mut rng::stream(80, "fuse", 0),
    );
    let mut cams = multi_scale_cams(&model, &image, &ScaleSet::default(), 1).unwrap();
    let a = fuse(&cams).unwrap();
    cams.reverse();
    let b = fuse(&cams).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-6);
    }
    let n1 = normalize(&a);
    let n2 = normalize(&n1);
    assert_eq!(n1.values, n2.values);
}

/// Eight images whose class is determined by overall brightness are
/// linearly separable through the GAP head: accuracy must reach 1.0
/// within 30 epochs.
#[test]
fn brightness_toy_set_reaches_perfect_accuracy() {
    let mut model = tiny_model(10);
    let mut data = Vec::new();
    for i in 0..8u64 {
        let mut r = rng::stream(81, "toy", i);
        let dark = i % 2 == 0;
        let (lo, hi) = if dark { (0.05, 0.35) } else { (0.55, 0.9) };
        let image = Tensor::rand_uniform(Shape::new(1, 1, 16, 16), lo, hi, &mut r);
        data.push((image, usize::from(!dark)));
    }
    let cfg = TrainConfig {
        epochs: 30,
        batch: 4,
        lr_init: 1e-3,
        gamma: 0.9,
        weight_decay: 1e-4,
        seed: 3,
        early_stop_val_acc: Some(1.0),
        min_epochs: 2,
    };
    let history = train_classifier(&mut model, &data, &data, &cfg).unwrap();
    let (_, acc) = evaluate_accuracy(&model, &data, 4).unwrap();
    assert_eq!(acc, 1.0, "history: {history:?}");
}

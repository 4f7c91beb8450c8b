//! Class activation maps: extraction from GAP-head classifiers,
//! multi-scale inference, fusion, min-max normalization, and thresholding
//! into binary seed masks.

use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::tensor::{LabelMask, Shape, Tensor};

/// Single-class 2-D activation map with the input rescale ratio that
/// produced it.
#[derive(Debug, Clone)]
pub struct Cam {
    pub class_id: usize,
    pub h: usize,
    pub w: usize,
    pub values: Vec<f32>,
    pub scale: f32,
}

impl Cam {
    pub fn new(class_id: usize, h: usize, w: usize, values: Vec<f32>, scale: f32) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::shape(format!(
                "cam value count {} does not match {h}x{w}",
                values.len()
            )));
        }
        if scale <= 0.0 {
            return Err(Error::contract("cam scale must be positive".to_string()));
        }
        Ok(Cam {
            class_id,
            h,
            w,
            values,
            scale,
        })
    }

    /// Mean value over all pixels (f64 accumulation).
    pub fn mean(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|&v| v as f64).sum();
        sum / self.values.len() as f64
    }
}

/// Ordered set of input rescale ratios for multi-scale inference.
#[derive(Debug, Clone)]
pub struct ScaleSet(Vec<f32>);

impl ScaleSet {
    pub fn new(scales: Vec<f32>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::config("scale set must not be empty".to_string()));
        }
        if let Some(&bad) = scales.iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::config(format!("scale {bad} must be positive")));
        }
        Ok(ScaleSet(scales))
    }

    pub fn ratios(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ScaleSet {
    /// The four shipped sampling rates.
    fn default() -> Self {
        ScaleSet(vec![0.5, 1.0, 1.5, 2.0])
    }
}

/// Binary segmentation threshold in `(0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdConfig {
    pub t: f32,
}

impl ThresholdConfig {
    /// Shipped preset for large lesion areas.
    pub const LARGE_LESION: ThresholdConfig = ThresholdConfig { t: 0.35 };
    /// Shipped preset for small, scattered lesions.
    pub const SMALL_LESION: ThresholdConfig = ThresholdConfig { t: 0.7 };

    pub fn new(t: f32) -> Result<Self> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::config(format!(
                "threshold must lie strictly inside (0, 1), got {t}"
            )));
        }
        Ok(ThresholdConfig { t })
    }
}

/// Weighted sum of feature maps: the activation map of class `class_id`
/// under head weights `head_weight` (`(num_classes, k, 1, 1)`).
///
/// Values are the raw weighted sum, with no rectification.
pub fn compute_cam(features: &Tensor, head_weight: &Tensor, class_id: usize) -> Result<Cam> {
    let fs = features.shape();
    let ws = head_weight.shape();
    if fs.n != 1 {
        return Err(Error::shape(format!(
            "cam extraction takes a single image's features, got batch {}",
            fs.n
        )));
    }
    if class_id >= ws.n {
        return Err(Error::contract(format!(
            "class id {class_id} out of range ({} classes)",
            ws.n
        )));
    }
    if ws.c * ws.h * ws.w != fs.c {
        return Err(Error::shape(format!(
            "head weight row length {} does not match {} feature channels",
            ws.c * ws.h * ws.w,
            fs.c
        )));
    }
    let hw = fs.h * fs.w;
    let row = &head_weight.data()[class_id * fs.c..][..fs.c];
    let mut acc = vec![0f64; hw];
    for (k, &wv) in row.iter().enumerate() {
        let plane = features.plane(0, k);
        for (a, &v) in acc.iter_mut().zip(plane) {
            *a += wv as f64 * v as f64;
        }
    }
    Cam::new(
        class_id,
        fs.h,
        fs.w,
        acc.into_iter().map(|v| v as f32).collect(),
        1.0,
    )
}

/// Runs the classifier on rescaled copies of `image` and extracts one
/// activation map per scale, each bilinearly resized back to the
/// original image extent and tagged with its scale.
pub fn multi_scale_cams(
    model: &ClassifierModel,
    image: &Tensor,
    scales: &ScaleSet,
    class_id: usize,
) -> Result<Vec<Cam>> {
    let s = image.shape();
    let min = model.min_input_extent();
    let mut cams = Vec::with_capacity(scales.len());
    for &ratio in scales.ratios() {
        let (rh, rw) = (
            ((s.h as f64) * ratio as f64).round() as usize,
            ((s.w as f64) * ratio as f64).round() as usize,
        );
        if rh < min || rw < min {
            return Err(Error::config(format!(
                "scale {ratio} rescales {}x{} to {rh}x{rw}, below the backbone minimum {min}",
                s.h, s.w
            )));
        }
        let rescaled = if (rh, rw) == (s.h, s.w) {
            image.clone()
        } else {
            let (data, shape) = kernels::resize_bilinear_forward(image.data(), s, rh, rw)?;
            Tensor::from_vec(shape, data)?
        };
        let out = model.classify(&rescaled)?;
        let raw = compute_cam(&out.features, model.head_weight(), class_id)?;
        let cam = if (raw.h, raw.w) == (s.h, s.w) {
            Cam { scale: ratio, ..raw }
        } else {
            let (data, _) = kernels::resize_bilinear_forward(
                &raw.values,
                Shape::new(1, 1, raw.h, raw.w),
                s.h,
                s.w,
            )?;
            Cam::new(class_id, s.h, s.w, data, ratio)?
        };
        cams.push(cam);
    }
    Ok(cams)
}

/// Elementwise mean of the given maps (all must share class and extent).
pub fn fuse(cams: &[Cam]) -> Result<Cam> {
    let first = cams
        .first()
        .ok_or_else(|| Error::contract("cannot fuse an empty cam list".to_string()))?;
    let mut acc = vec![0f64; first.values.len()];
    for cam in cams {
        if cam.class_id != first.class_id {
            return Err(Error::contract(format!(
                "cannot fuse cams of classes {} and {}",
                first.class_id, cam.class_id
            )));
        }
        if (cam.h, cam.w) != (first.h, first.w) {
            return Err(Error::shape(format!(
                "cannot fuse {}x{} with {}x{}",
                cam.h, cam.w, first.h, first.w
            )));
        }
        for (a, &v) in acc.iter_mut().zip(&cam.values) {
            *a += v as f64;
        }
    }
    let m = cams.len() as f64;
    Cam::new(
        first.class_id,
        first.h,
        first.w,
        acc.into_iter().map(|v| (v / m) as f32).collect(),
        1.0,
    )
}

/// Min-max normalization into `[0, 1]`. A constant map normalizes to all
/// zeros (an all-background seed).
pub fn normalize(cam: &Cam) -> Cam {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in &cam.values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let values = if hi > lo {
        let range = (hi - lo) as f64;
        cam.values
            .iter()
            .map(|&v| (((v - lo) as f64) / range) as f32)
            .collect()
    } else {
        vec![0.0; cam.values.len()]
    };
    Cam {
        values,
        ..cam.clone()
    }
}

/// Inclusive thresholding of a normalized map into a binary mask:
/// foreground where `value >= t`.
pub fn threshold(cam: &Cam, cfg: ThresholdConfig) -> Result<LabelMask> {
    if let Some(&bad) = cam
        .values
        .iter()
        .find(|&&v| !(-1e-6..=1.0 + 1e-6).contains(&v))
    {
        return Err(Error::contract(format!(
            "threshold requires a normalized map; found value {bad}"
        )));
    }
    let labels = cam
        .values
        .iter()
        .map(|&v| if v >= cfg.t { 1u8 } else { 0u8 })
        .collect();
    LabelMask::new(cam.h, cam.w, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam_of(values: Vec<f32>, h: usize, w: usize) -> Cam {
        Cam::new(1, h, w, values, 1.0).unwrap()
    }

    #[test]
    fn compute_cam_identity_and_annihilator() {
        let features = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        let w = Tensor::from_vec(Shape::new(2, 1, 1, 1), vec![0.0, 1.0]).unwrap();
        let cam = compute_cam(&features, &w, 1).unwrap();
        assert_eq!(cam.values, vec![1., 2., 3., 4.]);
        let zero = compute_cam(&features, &w, 0).unwrap();
        assert_eq!(zero.values, vec![0.0; 4]);
    }

    #[test]
    fn compute_cam_weighted_sum() {
        // Two 2x2 maps with weights (2, -1).
        let features = Tensor::from_vec(
            Shape::new(1, 2, 2, 2),
            vec![1., 2., 3., 4., 0., 1., 1., 0.],
        )
        .unwrap();
        let w = Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![2., -1., 0., 0.]).unwrap();
        let cam = compute_cam(&features, &w, 0).unwrap();
        assert_eq!(cam.values, vec![2., 3., 5., 8.]);
    }

    #[test]
    fn compute_cam_rejects_unknown_class() {
        let features = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let w = Tensor::zeros(Shape::new(2, 1, 1, 1));
        assert!(matches!(
            compute_cam(&features, &w, 5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn fuse_examples() {
        let a = cam_of(vec![0., 2.], 1, 2);
        let b = cam_of(vec![2., 0.], 1, 2);
        assert_eq!(fuse(&[a.clone(), b]).unwrap().values, vec![1., 1.]);
        let same = fuse(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(same.values, a.values);
        assert!(fuse(&[]).is_err());
        let odd = cam_of(vec![0.; 6], 2, 3);
        assert!(matches!(fuse(&[a, odd]), Err(Error::Shape(_))));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&cam_of(vec![1., 3.], 1, 2)).values, vec![0., 1.]);
        assert_eq!(
            normalize(&cam_of(vec![0., 1., 2., 4.], 1, 4)).values,
            vec![0., 0.25, 0.5, 1.0]
        );
        assert_eq!(normalize(&cam_of(vec![5., 5.], 1, 2)).values, vec![0., 0.]);
    }

    #[test]
    fn threshold_is_inclusive_and_validates() {
        let cam = cam_of(vec![0.35, 0.349, 0.0, 1.0], 1, 4);
        let mask = threshold(&cam, ThresholdConfig::LARGE_LESION).unwrap();
        assert_eq!(mask.labels, vec![1, 0, 0, 1]);
        let zeros = cam_of(vec![0.0; 4], 1, 4);
        let empty = threshold(&zeros, ThresholdConfig::new(0.5).unwrap()).unwrap();
        assert_eq!(empty.count_nonzero(), 0);
        let bad = cam_of(vec![0.5, 1.5, 0., 0.], 1, 4);
        assert!(threshold(&bad, ThresholdConfig::LARGE_LESION).is_err());
    }

    #[test]
    fn higher_threshold_nests_inside_lower() {
        let cam = cam_of(vec![0.0, 0.34, 0.35, 0.5, 0.69, 0.7, 0.71, 1.0], 2, 4);
        let loose = threshold(&cam, ThresholdConfig::LARGE_LESION).unwrap();
        let tight = threshold(&cam, ThresholdConfig::SMALL_LESION).unwrap();
        assert!(tight.is_subset_of(&loose));
        assert!(tight.count_nonzero() <= loose.count_nonzero());
    }

    #[test]
    fn threshold_presets_match_shipped_values() {
        assert_eq!(ThresholdConfig::LARGE_LESION.t, 0.35);
        assert_eq!(ThresholdConfig::SMALL_LESION.t, 0.7);
    }
}

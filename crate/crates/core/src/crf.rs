//! Fully connected CRF with Gaussian edge potentials, solved by
//! mean-field iteration. Sharpens seed pseudo-masks using pixel position
//! and intensity affinity.
//!
//! The pairwise term couples every pixel pair through an appearance
//! kernel (position + intensity) and a smoothness kernel (position only)
//! under Potts compatibility. For problems up to 64x64 pixels message
//! passing is exact O(N^2); larger problems truncate each Gaussian to a
//! window of radius 3 theta (discarding under 1.2% of kernel mass).

use crate::cam::Cam;
use crate::error::{Error, Result};
use crate::tensor::{LabelMask, Tensor};

/// Largest pixel count that still runs the exact dense path (64x64).
const EXACT_PATH_MAX_PIXELS: usize = 64 * 64;

#[derive(Debug, Clone, Copy)]
pub struct CrfParams {
    pub iterations: usize,
    /// Appearance-kernel weight.
    pub w_app: f32,
    /// Appearance spatial bandwidth, pixels.
    pub theta_alpha: f32,
    /// Appearance intensity bandwidth, normalized-intensity units.
    pub theta_beta: f32,
    /// Smoothness-kernel weight.
    pub w_smooth: f32,
    /// Smoothness spatial bandwidth, pixels.
    pub theta_gamma: f32,
    /// Unary probabilities are clipped into `[eps, 1 - eps]`.
    pub unary_clip: f32,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            iterations: 10,
            w_app: 10.0,
            theta_alpha: 80.0,
            theta_beta: 13.0 / 255.0,
            w_smooth: 3.0,
            theta_gamma: 3.0,
            unary_clip: 0.05,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        if self.theta_alpha <= 0.0 || self.theta_beta <= 0.0 || self.theta_gamma <= 0.0 {
            return Err(Error::config(
                "CRF bandwidths must be strictly positive".to_string(),
            ));
        }
        if self.w_app < 0.0 || self.w_smooth < 0.0 {
            return Err(Error::config(
                "CRF kernel weights must be non-negative".to_string(),
            ));
        }
        if !(self.unary_clip > 0.0 && self.unary_clip < 0.5) {
            return Err(Error::config(format!(
                "unary clip must lie in (0, 0.5), got {}",
                self.unary_clip
            )));
        }
        Ok(())
    }
}

/// Per-pixel, per-class negative log-probabilities, `(h*w, classes)`
/// row-major.
#[derive(Debug, Clone)]
pub struct UnaryField {
    pub h: usize,
    pub w: usize,
    pub classes: usize,
    neg_log: Vec<f32>,
}

impl UnaryField {
    /// Builds a unary field from per-pixel probabilities (each pixel's
    /// probabilities must sum to 1 within 1e-4).
    pub fn from_probs(h: usize, w: usize, classes: usize, probs: &[f32]) -> Result<Self> {
        if probs.len() != h * w * classes {
            return Err(Error::shape(format!(
                "unary probability count {} does not match {h}x{w}x{classes}",
                probs.len()
            )));
        }
        for pix in 0..h * w {
            let row = &probs[pix * classes..][..classes];
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            if (sum - 1.0).abs() > 1e-4 {
                return Err(Error::contract(format!(
                    "unary probabilities at pixel {pix} sum to {sum}, expected 1"
                )));
            }
        }
        let neg_log = probs.iter().map(|&p| -(p.max(1e-12)).ln()).collect();
        Ok(UnaryField {
            h,
            w,
            classes,
            neg_log,
        })
    }

    pub fn neg_log(&self) -> &[f32] {
        &self.neg_log
    }
}

/// Per-pixel class marginals produced by mean-field inference,
/// `(h*w, classes)` row-major.
#[derive(Debug, Clone)]
pub struct ClassDistribution {
    pub h: usize,
    pub w: usize,
    pub classes: usize,
    pub q: Vec<f32>,
}

impl ClassDistribution {
    /// Hard assignment: per-pixel argmax (lowest class index on ties).
    pub fn argmax_mask(&self) -> LabelMask {
        let mut labels = vec![0u8; self.h * self.w];
        for pix in 0..self.h * self.w {
            let row = &self.q[pix * self.classes..][..self.classes];
            let mut best = 0;
            for (l, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = l;
                }
            }
            labels[pix] = best as u8;
        }
        LabelMask {
            h: self.h,
            w: self.w,
            labels,
        }
    }
}

/// Foreground/background unary from a normalized activation map:
/// `p_fg = clip(cam, eps, 1 - eps)`, `p_bg = 1 - p_fg`, unary `-log p`.
pub fn unary_from_cam(cam: &Cam, eps: f32) -> Result<UnaryField> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::config(format!(
            "unary clip must lie in (0, 0.5), got {eps}"
        )));
    }
    if let Some(&bad) = cam
        .values
        .iter()
        .find(|&&v| !(-1e-6..=1.0 + 1e-6).contains(&v))
    {
        return Err(Error::contract(format!(
            "unary construction requires a normalized map; found value {bad}"
        )));
    }
    let mut probs = Vec::with_capacity(cam.values.len() * 2);
    for &v in &cam.values {
        let p_fg = v.clamp(eps, 1.0 - eps);
        probs.push(1.0 - p_fg);
        probs.push(p_fg);
    }
    UnaryField::from_probs(cam.h, cam.w, 2, &probs)
}

/// Grayscale (or per-channel RGB) intensity features in `[0, 1]`.
fn intensity_features(image: &Tensor, h: usize, w: usize) -> Result<(Vec<f32>, usize)> {
    let s = image.shape();
    if s.n != 1 || (s.h, s.w) != (h, w) {
        return Err(Error::shape(format!(
            "CRF image shape {} does not match {h}x{w} field",
            s
        )));
    }
    if let Some(&bad) = image.data().iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::contract(format!(
            "CRF image intensities must lie in [0, 1]; found {bad}"
        )));
    }
    Ok((image.data().to_vec(), s.c))
}

#[inline]
fn stable_softmax_into(logits: &[f64], out: &mut [f32]) {
    let mut hi = f64::NEG_INFINITY;
    for &v in logits {
        hi = hi.max(v);
    }
    let mut z = 0f64;
    for &v in logits {
        z += (v - hi).exp();
    }
    for (o, &v) in out.iter_mut().zip(logits) {
        *o = ((v - hi).exp() / z) as f32;
    }
}

fn init_q(unary: &UnaryField) -> Vec<f32> {
    let npix = unary.h * unary.w;
    let classes = unary.classes;
    let mut q = vec![0f32; npix * classes];
    let mut logits = vec![0f64; classes];
    for pix in 0..npix {
        for l in 0..classes {
            logits[l] = -(unary.neg_log[pix * classes + l] as f64);
        }
        stable_softmax_into(&logits, &mut q[pix * classes..(pix + 1) * classes]);
    }
    q
}

/// Mean-field inference. Q starts at `softmax(-unary)`; each iteration
/// gathers messages `m_i(l) = sum_{j != i} k(i, j) Q_j(l)`, applies Potts
/// compatibility, and renormalizes: `Q <- softmax(-unary - penalty)`.
pub fn mean_field(
    unary: &UnaryField,
    image: &Tensor,
    params: &CrfParams,
) -> Result<ClassDistribution> {
    params.validate()?;
    let (h, w, classes) = (unary.h, unary.w, unary.classes);
    let npix = h * w;
    let (feat, channels) = intensity_features(image, h, w)?;
    let mut q = init_q(unary);
    if params.iterations == 0 {
        return Ok(ClassDistribution { h, w, classes, q });
    }
    if npix <= EXACT_PATH_MAX_PIXELS {
        exact_iterations(unary, &feat, channels, params, &mut q);
    } else {
        windowed_iterations(unary, &feat, channels, params, &mut q);
    }
    Ok(ClassDistribution { h, w, classes, q })
}

/// Exact path: precompute the symmetric combined kernel matrix once, then
/// run the iterations as matrix-vector products. Row order of the f64
/// accumulation matches the straightforward double loop.
fn exact_iterations(
    unary: &UnaryField,
    feat: &[f32],
    channels: usize,
    params: &CrfParams,
    q: &mut Vec<f32>,
) {
    let (h, w, classes) = (unary.h, unary.w, unary.classes);
    let npix = h * w;
    let ta2 = 2.0 * params.theta_alpha as f64 * params.theta_alpha as f64;
    let tb2 = 2.0 * params.theta_beta as f64 * params.theta_beta as f64;
    let tg2 = 2.0 * params.theta_gamma as f64 * params.theta_gamma as f64;
    let (w_app, w_smooth) = (params.w_app as f64, params.w_smooth as f64);
    let mut kernel = vec![0f64; npix * npix];
    for i in 0..npix {
        let (yi, xi) = ((i / w) as f64, (i % w) as f64);
        for j in i + 1..npix {
            let (yj, xj) = ((j / w) as f64, (j % w) as f64);
            let dp2 = (yi - yj) * (yi - yj) + (xi - xj) * (xi - xj);
            let mut di2 = 0f64;
            for ch in 0..channels {
                let d = feat[ch * npix + i] as f64 - feat[ch * npix + j] as f64;
                di2 += d * d;
            }
            let k = w_app * (-dp2 / ta2 - di2 / tb2).exp() + w_smooth * (-dp2 / tg2).exp();
            kernel[i * npix + j] = k;
            kernel[j * npix + i] = k;
        }
    }
    let mut msg = vec![0f64; classes];
    let mut logits = vec![0f64; classes];
    let mut next = vec![0f32; npix * classes];
    for _ in 0..params.iterations {
        for i in 0..npix {
            let row = &kernel[i * npix..][..npix];
            msg.fill(0.0);
            for (j, &k) in row.iter().enumerate() {
                for l in 0..classes {
                    msg[l] += k * q[j * classes + l] as f64;
                }
            }
            let msum: f64 = msg.iter().sum();
            for l in 0..classes {
                logits[l] = -(unary.neg_log[i * classes + l] as f64) - (msum - msg[l]);
            }
            stable_softmax_into(&logits, &mut next[i * classes..(i + 1) * classes]);
        }
        std::mem::swap(q, &mut next);
    }
}

/// Truncated-window path for large images: each Gaussian kernel only
/// reaches pixels within radius `3 * theta` of its center.
fn windowed_iterations(
    unary: &UnaryField,
    feat: &[f32],
    channels: usize,
    params: &CrfParams,
    q: &mut Vec<f32>,
) {
    let (h, w, classes) = (unary.h, unary.w, unary.classes);
    let npix = h * w;
    let ta2 = 2.0 * params.theta_alpha as f64 * params.theta_alpha as f64;
    let tb2 = 2.0 * params.theta_beta as f64 * params.theta_beta as f64;
    let tg2 = 2.0 * params.theta_gamma as f64 * params.theta_gamma as f64;
    let (w_app, w_smooth) = (params.w_app as f64, params.w_smooth as f64);
    let r_app = (3.0 * params.theta_alpha).ceil() as isize;
    let r_smooth = (3.0 * params.theta_gamma).ceil() as isize;
    let r = r_app.max(r_smooth);
    let mut msg = vec![0f64; classes];
    let mut logits = vec![0f64; classes];
    let mut next = vec![0f32; npix * classes];
    for _ in 0..params.iterations {
        for i in 0..npix {
            let (yi, xi) = ((i / w) as isize, (i % w) as isize);
            msg.fill(0.0);
            for dy in -r..=r {
                let yj = yi + dy;
                if yj < 0 || yj >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let xj = xi + dx;
                    if xj < 0 || xj >= w as isize || (dy == 0 && dx == 0) {
                        continue;
                    }
                    let j = yj as usize * w + xj as usize;
                    let dp2 = (dy * dy + dx * dx) as f64;
                    let mut k = 0f64;
                    if w_app > 0.0 && dy.abs() <= r_app && dx.abs() <= r_app {
                        let mut di2 = 0f64;
                        for ch in 0..channels {
                            let d = feat[ch * npix + i] as f64 - feat[ch * npix + j] as f64;
                            di2 += d * d;
                        }
                        k += w_app * (-dp2 / ta2 - di2 / tb2).exp();
                    }
                    if w_smooth > 0.0 && dy.abs() <= r_smooth && dx.abs() <= r_smooth {
                        k += w_smooth * (-dp2 / tg2).exp();
                    }
                    if k != 0.0 {
                        for l in 0..classes {
                            msg[l] += k * q[j * classes + l] as f64;
                        }
                    }
                }
            }
            let msum: f64 = msg.iter().sum();
            for l in 0..classes {
                logits[l] = -(unary.neg_log[i * classes + l] as f64) - (msum - msg[l]);
            }
            stable_softmax_into(&logits, &mut next[i * classes..(i + 1) * classes]);
        }
        std::mem::swap(q, &mut next);
    }
}

/// CRF refinement of a seed pseudo-mask: builds the unary from the
/// normalized activation map that produced the seed, runs mean-field
/// inference against the source image, and returns the per-pixel argmax.
pub fn refine_mask(
    seed: &LabelMask,
    cam: &Cam,
    image: &Tensor,
    params: &CrfParams,
) -> Result<LabelMask> {
    if (seed.h, seed.w) != (cam.h, cam.w) {
        return Err(Error::shape(format!(
            "seed {}x{} does not match cam {}x{}",
            seed.h, seed.w, cam.h, cam.w
        )));
    }
    let unary = unary_from_cam(cam, params.unary_clip)?;
    let q = mean_field(&unary, image, params)?;
    Ok(q.argmax_mask())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn flat_cam(values: Vec<f32>, h: usize, w: usize) -> Cam {
        Cam::new(1, h, w, values, 1.0).unwrap()
    }

    #[test]
    fn unary_from_cam_symmetry_and_clipping() {
        let cam = flat_cam(vec![0.5, 1.0], 1, 2);
        let u = unary_from_cam(&cam, 0.05).unwrap();
        // cam = 0.5 gives equal unaries for both classes.
        assert!((u.neg_log()[0] - u.neg_log()[1]).abs() < 1e-7);
        // cam = 1.0 clips to p_fg = 0.95.
        assert!((u.neg_log()[3] - (-(0.95f32).ln())).abs() < 1e-6);
    }

    #[test]
    fn unary_round_trips_to_clipped_probabilities() {
        let cam = flat_cam(vec![0.0, 0.2, 0.6, 0.97], 2, 2);
        let eps = 0.1f32;
        let u = unary_from_cam(&cam, eps).unwrap();
        for (pix, &v) in cam.values.iter().enumerate() {
            let p_fg = v.clamp(eps, 1.0 - eps) as f64;
            let e_bg = (-(u.neg_log()[pix * 2]) as f64).exp();
            let e_fg = (-(u.neg_log()[pix * 2 + 1]) as f64).exp();
            let z = e_bg + e_fg;
            assert!((e_fg / z - p_fg).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_pairwise_weights_reproduce_the_unary_softmax() {
        let cam = flat_cam(vec![0.1, 0.8, 0.4, 0.6], 2, 2);
        let image = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.2, 0.9, 0.1, 0.7]).unwrap();
        let u = unary_from_cam(&cam, 0.05).unwrap();
        let params = CrfParams {
            w_app: 0.0,
            w_smooth: 0.0,
            iterations: 7,
            ..CrfParams::default()
        };
        let out = mean_field(&u, &image, &params).unwrap();
        let base = init_q(&u);
        for (a, b) in out.q.iter().zip(&base) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_iterations_is_the_initialization() {
        let cam = flat_cam(vec![0.3, 0.9], 1, 2);
        let image = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.2, 0.8]).unwrap();
        let u = unary_from_cam(&cam, 0.05).unwrap();
        let params = CrfParams {
            iterations: 0,
            ..CrfParams::default()
        };
        let out = mean_field(&u, &image, &params).unwrap();
        for (a, b) in out.q.iter().zip(&init_q(&u)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rows_stay_normalized_after_every_iteration() {
        let cam = flat_cam(
            (0..36).map(|i| (i as f32 / 35.0)).collect(),
            6,
            6,
        );
        let image = Tensor::from_vec(
            Shape::new(1, 1, 6, 6),
            (0..36).map(|i| ((i * 7) % 36) as f32 / 35.0).collect(),
        )
        .unwrap();
        let u = unary_from_cam(&cam, 0.05).unwrap();
        for iters in [1, 3, 10] {
            let params = CrfParams {
                iterations: iters,
                w_app: 4.0,
                theta_alpha: 3.0,
                theta_beta: 0.2,
                w_smooth: 2.0,
                theta_gamma: 1.5,
                unary_clip: 0.05,
            };
            let out = mean_field(&u, &image, &params).unwrap();
            for pix in 0..36 {
                let sum: f64 = out.q[pix * 2..pix * 2 + 2].iter().map(|&v| v as f64).sum();
                assert!((sum - 1.0).abs() < 1e-6, "iteration {iters} pixel {pix}: {sum}");
            }
        }
    }

    #[test]
    fn label_permutation_equivariance() {
        let cam = flat_cam(vec![0.1, 0.9, 0.5, 0.3], 2, 2);
        let image = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.1, 0.9, 0.5, 0.3]).unwrap();
        let u = unary_from_cam(&cam, 0.05).unwrap();
        // Swap the two classes in the unary.
        let mut swapped = Vec::new();
        for pix in 0..4 {
            let p_bg = (-(u.neg_log()[pix * 2]) as f64).exp() as f32;
            let p_fg = (-(u.neg_log()[pix * 2 + 1]) as f64).exp() as f32;
            let z = p_bg + p_fg;
            swapped.push(p_fg / z);
            swapped.push(p_bg / z);
        }
        let u_swapped = UnaryField::from_probs(2, 2, 2, &swapped).unwrap();
        let params = CrfParams {
            iterations: 5,
            theta_alpha: 2.0,
            w_app: 3.0,
            theta_beta: 0.3,
            w_smooth: 1.0,
            theta_gamma: 1.0,
            unary_clip: 0.05,
        };
        let a = mean_field(&u, &image, &params).unwrap();
        let b = mean_field(&u_swapped, &image, &params).unwrap();
        for pix in 0..4 {
            assert!((a.q[pix * 2] - b.q[pix * 2 + 1]).abs() < 2e-6);
            assert!((a.q[pix * 2 + 1] - b.q[pix * 2]).abs() < 2e-6);
        }
    }

    #[test]
    fn refine_mask_zero_pairwise_equals_unary_argmax() {
        let cam = flat_cam(vec![0.1, 0.8, 0.45, 0.55], 2, 2);
        let seed = crate::cam::threshold(&cam, crate::cam::ThresholdConfig::new(0.5).unwrap()).unwrap();
        let image = Tensor::full(Shape::new(1, 1, 2, 2), 0.5);
        let params = CrfParams {
            w_app: 0.0,
            w_smooth: 0.0,
            ..CrfParams::default()
        };
        let refined = refine_mask(&seed, &cam, &image, &params).unwrap();
        // Unary argmax: foreground where clip(cam) > 0.5.
        assert_eq!(refined.labels, vec![0, 1, 0, 1]);
    }
}

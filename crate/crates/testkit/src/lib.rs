//! Brute-force reference implementations used as oracles by the test
//! suites of the other workspace crates.
//!
//! Everything here is deliberately naive: plain nested loops over plain
//! slices, no shared code with the production crates. Accumulation is in
//! f64 throughout so oracle values are good to well below the tolerances
//! the tests assert.

/// Output spatial extent of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Direct nested-loop 2-D convolution (cross-correlation, as in NN usage).
///
/// `input` is `(n, ci, h, w)` row-major, `weight` is `(co, ci, kh, kw)`,
/// `bias` has length `co`. Returns `(n, co, oh, ow)` row-major.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_naive(
    input: &[f32],
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    co: usize,
    kh: usize,
    kw: usize,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Vec<f32> {
    let oh = conv_out_dim(h, kh, stride, padding);
    let ow = conv_out_dim(w, kw, stride, padding);
    let mut out = vec![0f32; n * co * oh * ow];
    for in_ in 0..n {
        for oc in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc] as f64;
                    for icn in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input
                                    [((in_ * ci + icn) * h + iy as usize) * w + ix as usize];
                                let wv = weight[((oc * ci + icn) * kh + ky) * kw + kx];
                                acc += iv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((in_ * co + oc) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    out
}

/// Direct nested-loop transposed convolution.
///
/// `weight` is `(ci, co, kh, kw)`. Output extent per axis is
/// `(in - 1) * stride - 2 * padding + kernel`.
#[allow(clippy::too_many_arguments)]
pub fn transposed_conv2d_naive(
    input: &[f32],
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    co: usize,
    kh: usize,
    kw: usize,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Vec<f32> {
    let oh = (h - 1) * stride + kh - 2 * padding;
    let ow = (w - 1) * stride + kw - 2 * padding;
    let mut out = vec![0f64; n * co * oh * ow];
    for in_ in 0..n {
        for oc in 0..co {
            for (i, v) in out[(in_ * co + oc) * oh * ow..(in_ * co + oc + 1) * oh * ow]
                .iter_mut()
                .enumerate()
            {
                let _ = i;
                *v = bias[oc] as f64;
            }
        }
        for icn in 0..ci {
            for iy in 0..h {
                for ix in 0..w {
                    let iv = input[((in_ * ci + icn) * h + iy) * w + ix] as f64;
                    for oc in 0..co {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (iy * stride + ky) as isize - padding as isize;
                                let ox = (ix * stride + kx) as isize - padding as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let wv = weight[((icn * co + oc) * kh + ky) * kw + kx] as f64;
                                out[((in_ * co + oc) * oh + oy as usize) * ow + ox as usize] +=
                                    iv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out.into_iter().map(|v| v as f32).collect()
}

/// Direct windowed-max pooling by enumeration.
pub fn maxpool2d_naive(
    input: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
) -> Vec<f32> {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = vec![0f32; n * c * oh * ow];
    for in_ in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let v = input
                                [((in_ * c + ch) * h + oy * stride + ky) * w + ox * stride + kx];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out[((in_ * c + ch) * oh + oy) * ow + ox] = best;
                }
            }
        }
    }
    out
}

/// Two-pass per-channel batch statistics: `(mean, biased variance)`.
pub fn batch_stats_two_pass(input: &[f32], n: usize, c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut means = vec![0f64; c];
    let mut vars = vec![0f64; c];
    let m = (n * h * w) as f64;
    for ch in 0..c {
        let mut sum = 0f64;
        for in_ in 0..n {
            for y in 0..h {
                for x in 0..w {
                    sum += input[((in_ * c + ch) * h + y) * w + x] as f64;
                }
            }
        }
        means[ch] = sum / m;
        let mut sq = 0f64;
        for in_ in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let d = input[((in_ * c + ch) * h + y) * w + x] as f64 - means[ch];
                    sq += d * d;
                }
            }
        }
        vars[ch] = sq / m;
    }
    (means, vars)
}

/// Plain summation mean over each `(n, c)` plane.
pub fn gap_naive(input: &[f32], n: usize, c: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0f32; n * c];
    for in_ in 0..n {
        for ch in 0..c {
            let mut sum = 0f64;
            for y in 0..h {
                for x in 0..w {
                    sum += input[((in_ * c + ch) * h + y) * w + x] as f64;
                }
            }
            out[in_ * c + ch] = (sum / (h * w) as f64) as f32;
        }
    }
    out
}

/// Central-difference gradient check against an analytic gradient.
///
/// Perturbs each coordinate of `x` in place by `±step` and evaluates `f`
/// (which must accumulate in f64 internally for the differences to be
/// meaningful). Divides by the step actually realized after f32
/// rounding, not the nominal one. Each coordinate's error is measured
/// relative to the largest gradient magnitude in the block (floored at
/// 1e-3): the scale-aware comparison appropriate for forward passes with
/// f32-stored intermediates, whose evaluation noise is proportional to
/// the objective scale rather than to any single coordinate.
pub fn max_rel_err_fd<F>(mut f: F, x: &mut [f32], analytic: &[f32], step: f64) -> f64
where
    F: FnMut(&[f32]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let gmax = analytic
        .iter()
        .fold(0f64, |m, &g| m.max((g as f64).abs()));
    let mut worst = 0f64;
    for i in 0..x.len() {
        let orig = x[i];
        let plus = (orig as f64 + step) as f32;
        let minus = (orig as f64 - step) as f32;
        x[i] = plus;
        let fp = f(x);
        x[i] = minus;
        let fm = f(x);
        x[i] = orig;
        let fd = (fp - fm) / (plus as f64 - minus as f64);
        let an = analytic[i] as f64;
        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(gmax).max(1e-3);
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Mean-field dense-CRF parameters for the naive reference.
#[derive(Debug, Clone, Copy)]
pub struct NaiveCrfParams {
    pub iterations: usize,
    pub w_app: f64,
    pub theta_alpha: f64,
    pub theta_beta: f64,
    pub w_smooth: f64,
    pub theta_gamma: f64,
}

/// Written-out O(N^2) mean-field loop over a fully connected CRF with a
/// Gaussian appearance kernel, a Gaussian smoothness kernel, and Potts
/// compatibility.
///
/// `unary` is `(h*w, classes)` row-major negative log-probabilities,
/// `image` is `h*w` grayscale intensities in `[0, 1]`. Q is stored in f32
/// after every iteration; message sums accumulate in f64.
pub fn mean_field_naive(
    unary: &[f32],
    image: &[f32],
    h: usize,
    w: usize,
    classes: usize,
    p: &NaiveCrfParams,
) -> Vec<f32> {
    let npix = h * w;
    assert_eq!(unary.len(), npix * classes);
    assert_eq!(image.len(), npix);
    let softmax_neg_unary = |i: usize, out: &mut [f32]| {
        let mut hi = f64::NEG_INFINITY;
        for l in 0..classes {
            hi = hi.max(-(unary[i * classes + l] as f64));
        }
        let mut z = 0f64;
        let mut e = vec![0f64; classes];
        for l in 0..classes {
            e[l] = (-(unary[i * classes + l] as f64) - hi).exp();
            z += e[l];
        }
        for l in 0..classes {
            out[l] = (e[l] / z) as f32;
        }
    };
    let mut q = vec![0f32; npix * classes];
    for i in 0..npix {
        let mut row = vec![0f32; classes];
        softmax_neg_unary(i, &mut row);
        q[i * classes..(i + 1) * classes].copy_from_slice(&row);
    }
    let ta2 = 2.0 * p.theta_alpha * p.theta_alpha;
    let tb2 = 2.0 * p.theta_beta * p.theta_beta;
    let tg2 = 2.0 * p.theta_gamma * p.theta_gamma;
    for _ in 0..p.iterations {
        let mut next = vec![0f32; npix * classes];
        for i in 0..npix {
            let (yi, xi) = (i / w, i % w);
            let mut msg = vec![0f64; classes];
            for j in 0..npix {
                if j == i {
                    continue;
                }
                let (yj, xj) = (j / w, j % w);
                let dy = yi as f64 - yj as f64;
                let dx = xi as f64 - xj as f64;
                let dp2 = dy * dy + dx * dx;
                let di = image[i] as f64 - image[j] as f64;
                let k = p.w_app * (-dp2 / ta2 - di * di / tb2).exp()
                    + p.w_smooth * (-dp2 / tg2).exp();
                for l in 0..classes {
                    msg[l] += k * q[j * classes + l] as f64;
                }
            }
            let msum: f64 = msg.iter().sum();
            let mut hi = f64::NEG_INFINITY;
            let mut logits = vec![0f64; classes];
            for l in 0..classes {
                // Potts compatibility: unit penalty from mass on other labels.
                let penalty = msum - msg[l];
                logits[l] = -(unary[i * classes + l] as f64) - penalty;
                hi = hi.max(logits[l]);
            }
            let mut z = 0f64;
            for l in 0..classes {
                logits[l] = (logits[l] - hi).exp();
                z += logits[l];
            }
            for l in 0..classes {
                next[i * classes + l] = (logits[l] / z) as f32;
            }
        }
        q = next;
    }
    q
}

/// Per-class pixel counts from separate full passes over the masks.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Brute-force confusion counting for segmentation metrics.
///
/// Returns `(pa, miou, dice_fg, per-class counts)` with:
/// pixel accuracy over all pixels, IoU averaged over classes present in
/// either mask, and Dice for foreground class 1 (both-empty counts as a
/// perfect 1.0).
pub fn segmentation_metrics_naive(
    pred: &[u8],
    truth: &[u8],
    classes: usize,
) -> (f64, f64, f64, Vec<ClassCounts>) {
    assert_eq!(pred.len(), truth.len());
    let total = pred.len() as f64;
    let mut correct = 0u64;
    for i in 0..pred.len() {
        if pred[i] == truth[i] {
            correct += 1;
        }
    }
    let mut counts = vec![ClassCounts::default(); classes];
    for (cl, cnt) in counts.iter_mut().enumerate() {
        let cl = cl as u8;
        for i in 0..pred.len() {
            match (pred[i] == cl, truth[i] == cl) {
                (true, true) => cnt.tp += 1,
                (true, false) => cnt.fp += 1,
                (false, true) => cnt.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let mut iou_sum = 0f64;
    let mut present = 0usize;
    for cnt in &counts {
        let denom = cnt.tp + cnt.fp + cnt.fn_;
        if denom > 0 {
            iou_sum += cnt.tp as f64 / denom as f64;
            present += 1;
        }
    }
    let miou = if present > 0 { iou_sum / present as f64 } else { 1.0 };
    let fg = &counts[1.min(classes - 1)];
    let dice_denom = 2 * fg.tp + fg.fp + fg.fn_;
    let dice = if dice_denom == 0 {
        1.0
    } else {
        2.0 * fg.tp as f64 / dice_denom as f64
    };
    (correct as f64 / total, miou, dice, counts)
}

/// Naive seeding loss: mean negative log-probability over all seeded
/// locations. `y` is `(classes, h, w)` row-major probabilities; seeds are
/// `(class, y, x)` triples. Probabilities are clamped at 1e-12.
pub fn seeding_loss_naive(y: &[f32], classes: usize, h: usize, w: usize, seeds: &[(usize, usize, usize)]) -> f64 {
    assert!(!seeds.is_empty());
    let _ = classes;
    let mut acc = 0f64;
    for &(cl, sy, sx) in seeds {
        let p = (y[(cl * h + sy) * w + sx] as f64).max(1e-12);
        acc -= p.ln();
    }
    acc / seeds.len() as f64
}

/// Naive per-pixel cross-entropy against a dense label mask, mean-reduced
/// over every pixel.
pub fn pixel_ce_naive(y: &[f32], classes: usize, h: usize, w: usize, target: &[u8]) -> f64 {
    let _ = classes;
    assert_eq!(target.len(), h * w);
    let mut acc = 0f64;
    for sy in 0..h {
        for sx in 0..w {
            let cl = target[sy * w + sx] as usize;
            let p = (y[(cl * h + sy) * w + sx] as f64).max(1e-12);
            acc -= p.ln();
        }
    }
    acc / (h * w) as f64
}

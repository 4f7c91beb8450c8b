//! Raw compute kernels over flat `f32` slices.
//!
//! Every reduction accumulates in f64 and iterates in a fixed order, so
//! results are deterministic and precise enough for the finite-difference
//! gradient checks. Hot loops are arranged so the innermost dimension is
//! contiguous in both source and destination (scalar-times-row updates),
//! which the compiler vectorizes.

use crate::error::{Error, Result};
use crate::tensor::Shape;

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::shape(format!(
            "kernel extent {kernel} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[inline]
fn axpy(acc: &mut [f64], row: &[f32], w: f64) {
    let n = acc.len();
    let acc = &mut acc[..n];
    let row = &row[..n];
    for i in 0..n {
        acc[i] = w.mul_add(row[i] as f64, acc[i]);
    }
}

/// f64 dot product of two f32 rows, eight lanes per iteration.
///
/// The AVX2 path and the scalar path share the same lane structure and
/// reduction order, so they produce bitwise-identical results.
#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    use std::arch::x86_64::*;
    let n = a.len().min(b.len());
    let chunks = n / 16;
    // SAFETY: loads stay within `chunks * 16 <= n` elements of both slices.
    unsafe {
        let mut acc0 = _mm512_setzero_pd();
        let mut acc1 = _mm512_setzero_pd();
        for i in 0..chunks {
            let pa = a.as_ptr().add(i * 16);
            let pb = b.as_ptr().add(i * 16);
            acc0 = _mm512_fmadd_pd(
                _mm512_cvtps_pd(_mm256_loadu_ps(pa)),
                _mm512_cvtps_pd(_mm256_loadu_ps(pb)),
                acc0,
            );
            acc1 = _mm512_fmadd_pd(
                _mm512_cvtps_pd(_mm256_loadu_ps(pa.add(8))),
                _mm512_cvtps_pd(_mm256_loadu_ps(pb.add(8))),
                acc1,
            );
        }
        let mut tail = 0f64;
        for j in chunks * 16..n {
            tail += a[j] as f64 * b[j] as f64;
        }
        _mm512_reduce_add_pd(acc0) + _mm512_reduce_add_pd(acc1) + tail
    }
}

#[cfg(all(
    target_arch = "x86_64",
    target_feature = "avx2",
    target_feature = "fma",
    not(target_feature = "avx512f")
))]
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    use std::arch::x86_64::*;
    let n = a.len().min(b.len());
    let chunks = n / 8;
    // SAFETY: every load stays within `chunks * 8 <= n` elements of both
    // slices; avx2/fma availability is a compile-time target feature.
    unsafe {
        let mut acc0 = _mm256_setzero_pd();
        let mut acc1 = _mm256_setzero_pd();
        for i in 0..chunks {
            let pa = a.as_ptr().add(i * 8);
            let pb = b.as_ptr().add(i * 8);
            acc0 = _mm256_fmadd_pd(
                _mm256_cvtps_pd(_mm_loadu_ps(pa)),
                _mm256_cvtps_pd(_mm_loadu_ps(pb)),
                acc0,
            );
            acc1 = _mm256_fmadd_pd(
                _mm256_cvtps_pd(_mm_loadu_ps(pa.add(4))),
                _mm256_cvtps_pd(_mm_loadu_ps(pb.add(4))),
                acc1,
            );
        }
        let mut l0 = [0f64; 4];
        let mut l1 = [0f64; 4];
        _mm256_storeu_pd(l0.as_mut_ptr(), acc0);
        _mm256_storeu_pd(l1.as_mut_ptr(), acc1);
        let mut tail = 0f64;
        for j in chunks * 8..n {
            tail += a[j] as f64 * b[j] as f64;
        }
        ((l0[0] + l0[1]) + (l0[2] + l0[3])) + ((l1[0] + l1[1]) + (l1[2] + l1[3])) + tail
    }
}

#[cfg(not(all(
    target_arch = "x86_64",
    any(target_feature = "avx512f", all(target_feature = "avx2", target_feature = "fma"))
)))]
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len().min(b.len());
    let chunks = n / 8;
    let mut acc = [0f64; 8];
    for i in 0..chunks {
        let base = i * 8;
        for lane in 0..8 {
            acc[lane] = (a[base + lane] as f64).mul_add(b[base + lane] as f64, acc[lane]);
        }
    }
    let mut tail = 0f64;
    for j in chunks * 8..n {
        tail += a[j] as f64 * b[j] as f64;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Four dot products sharing the left row: `[dot(a, b[0]), ..]`. The
/// shared side is converted to f64 once per chunk, and the four
/// independent accumulator chains hide FMA latency.
#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
#[inline]
fn dot4(a: &[f32], b: [&[f32]; 4]) -> [f64; 4] {
    use std::arch::x86_64::*;
    let n = a
        .len()
        .min(b[0].len())
        .min(b[1].len())
        .min(b[2].len())
        .min(b[3].len());
    let chunks = n / 8;
    // SAFETY: loads stay within `chunks * 8 <= n` of all five slices.
    unsafe {
        let mut acc = [_mm512_setzero_pd(); 4];
        for i in 0..chunks {
            let av = _mm512_cvtps_pd(_mm256_loadu_ps(a.as_ptr().add(i * 8)));
            for (r, row) in b.iter().enumerate() {
                let bv = _mm512_cvtps_pd(_mm256_loadu_ps(row.as_ptr().add(i * 8)));
                acc[r] = _mm512_fmadd_pd(av, bv, acc[r]);
            }
        }
        let mut out = [0f64; 4];
        for (r, o) in out.iter_mut().enumerate() {
            let mut tail = 0f64;
            for j in chunks * 8..n {
                tail += a[j] as f64 * b[r][j] as f64;
            }
            *o = _mm512_reduce_add_pd(acc[r]) + tail;
        }
        out
    }
}

#[cfg(all(
    target_arch = "x86_64",
    target_feature = "avx2",
    target_feature = "fma",
    not(target_feature = "avx512f")
))]
#[inline]
fn dot4(a: &[f32], b: [&[f32]; 4]) -> [f64; 4] {
    use std::arch::x86_64::*;
    let n = a
        .len()
        .min(b[0].len())
        .min(b[1].len())
        .min(b[2].len())
        .min(b[3].len());
    let chunks = n / 8;
    // SAFETY: loads stay within `chunks * 8 <= n` of all five slices.
    unsafe {
        let mut acc = [_mm256_setzero_pd(); 8];
        for i in 0..chunks {
            let pa = a.as_ptr().add(i * 8);
            let a0 = _mm256_cvtps_pd(_mm_loadu_ps(pa));
            let a1 = _mm256_cvtps_pd(_mm_loadu_ps(pa.add(4)));
            for (r, row) in b.iter().enumerate() {
                let pb = row.as_ptr().add(i * 8);
                acc[2 * r] =
                    _mm256_fmadd_pd(a0, _mm256_cvtps_pd(_mm_loadu_ps(pb)), acc[2 * r]);
                acc[2 * r + 1] =
                    _mm256_fmadd_pd(a1, _mm256_cvtps_pd(_mm_loadu_ps(pb.add(4))), acc[2 * r + 1]);
            }
        }
        let mut out = [0f64; 4];
        for (r, o) in out.iter_mut().enumerate() {
            let mut l0 = [0f64; 4];
            let mut l1 = [0f64; 4];
            _mm256_storeu_pd(l0.as_mut_ptr(), acc[2 * r]);
            _mm256_storeu_pd(l1.as_mut_ptr(), acc[2 * r + 1]);
            let mut tail = 0f64;
            for j in chunks * 8..n {
                tail += a[j] as f64 * b[r][j] as f64;
            }
            *o = ((l0[0] + l0[1]) + (l0[2] + l0[3]))
                + ((l1[0] + l1[1]) + (l1[2] + l1[3]))
                + tail;
        }
        out
    }
}

#[cfg(not(all(
    target_arch = "x86_64",
    any(target_feature = "avx512f", all(target_feature = "avx2", target_feature = "fma"))
)))]
#[inline]
fn dot4(a: &[f32], b: [&[f32]; 4]) -> [f64; 4] {
    [dot(a, b[0]), dot(a, b[1]), dot(a, b[2]), dot(a, b[3])]
}

/// Valid output-column range `[lo, hi)` for one kernel column, i.e. the
/// columns where `ox * stride + kx - padding` lands inside `[0, w)`.
#[inline]
fn col_range(ow: usize, w: usize, kx: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(kx).div_ceil(stride);
    let max_ix = w as isize - 1 - (kx as isize - padding as isize);
    if max_ix < 0 {
        return (0, 0);
    }
    let hi = (max_ix as usize / stride + 1).min(ow);
    (lo.min(hi), hi)
}

/// Unfolds one image's planes into the `(ci * kh * kw, oh * ow)` patch
/// matrix: row `(ic, ky, kx)` holds, per output pixel, the input value
/// under that kernel tap (zero where the tap falls into padding).
#[allow(clippy::too_many_arguments)]
fn im2col(
    input_planes: &[f32],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
    out: &mut [f32],
) {
    let cols = oh * ow;
    out.fill(0.0);
    let mut k = 0usize;
    for ic in 0..ci {
        let plane = &input_planes[ic * h * w..][..h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut out[k * cols..][..cols];
                let (lo, hi) = col_range(ow, w, kx, stride, padding);
                if lo < hi {
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let ix0 = lo * stride + kx - padding;
                        if stride == 1 {
                            row[oy * ow + lo..oy * ow + hi]
                                .copy_from_slice(&plane[iy as usize * w + ix0..][..hi - lo]);
                        } else {
                            let src = &plane[iy as usize * w..][..w];
                            for ox in lo..hi {
                                row[oy * ow + ox] = src[ox * stride + kx - padding];
                            }
                        }
                    }
                }
                k += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch-matrix rows (in f64) back
/// onto the input grid.
#[allow(clippy::too_many_arguments)]
fn col2im_add(
    cols_mat: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
    acc: &mut [f64],
) {
    let cols = oh * ow;
    let mut k = 0usize;
    for ic in 0..ci {
        let plane = &mut acc[ic * h * w..][..h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols_mat[k * cols..][..cols];
                let (lo, hi) = col_range(ow, w, kx, stride, padding);
                if lo < hi {
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let ix0 = lo * stride + kx - padding;
                        if stride == 1 {
                            let dst = &mut plane[iy as usize * w + ix0..][..hi - lo];
                            let src = &row[oy * ow + lo..oy * ow + hi];
                            for i in 0..dst.len() {
                                dst[i] += src[i];
                            }
                        } else {
                            for ox in lo..hi {
                                plane[iy as usize * w + ox * stride + kx - padding] +=
                                    row[oy * ow + ox];
                            }
                        }
                    }
                }
                k += 1;
            }
        }
    }
}

/// 2-D convolution. `input` is `(n, ci, h, w)`, `weight` `(co, ci, kh, kw)`,
/// optional `bias` of length `co`. Implemented as an unfold (im2col)
/// followed by row-wise f64-accumulating products.
pub fn conv2d_forward(
    input: &[f32],
    ishape: Shape,
    weight: &[f32],
    wshape: Shape,
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
) -> Result<(Vec<f32>, Shape)> {
    let (co, ci, kh, kw) = (wshape.n, wshape.c, wshape.h, wshape.w);
    if ci != ishape.c {
        return Err(Error::shape(format!(
            "conv weight expects {ci} input channels, input has {}",
            ishape.c
        )));
    }
    if stride < 1 {
        return Err(Error::contract("conv stride must be >= 1".to_string()));
    }
    let oh = conv_out_dim(ishape.h, kh, stride, padding)?;
    let ow = conv_out_dim(ishape.w, kw, stride, padding)?;
    let oshape = Shape::new(ishape.n, co, oh, ow);
    let (hw, cols, kdim) = (ishape.h * ishape.w, oh * ow, ci * kh * kw);
    let mut out = vec![0f32; oshape.count()];
    let mut patches = vec![0f32; kdim * cols];
    let mut acc = vec![0f64; cols];
    for n in 0..ishape.n {
        im2col(
            &input[n * ci * hw..][..ci * hw],
            ci,
            ishape.h,
            ishape.w,
            kh,
            kw,
            oh,
            ow,
            stride,
            padding,
            &mut patches,
        );
        for oc in 0..co {
            acc.fill(bias.map(|b| b[oc] as f64).unwrap_or(0.0));
            for k in 0..kdim {
                axpy(&mut acc, &patches[k * cols..][..cols], weight[oc * kdim + k] as f64);
            }
            let dst = &mut out[(n * co + oc) * cols..][..cols];
            for (d, &a) in dst.iter_mut().zip(acc.iter()) {
                *d = a as f32;
            }
        }
    }
    Ok((out, oshape))
}

/// Combined convolution backward. Builds the patch matrix once per image
/// and produces whichever gradients are requested.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub fn conv2d_backward(
    input: &[f32],
    ishape: Shape,
    weight: &[f32],
    wshape: Shape,
    dout: &[f32],
    oshape: Shape,
    stride: usize,
    padding: usize,
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<f32>>, Option<(Vec<f32>, Vec<f32>)>) {
    let (co, ci, kh, kw) = (wshape.n, wshape.c, wshape.h, wshape.w);
    let (oh, ow) = (oshape.h, oshape.w);
    let (hw, cols, kdim) = (ishape.h * ishape.w, oh * ow, ci * kh * kw);
    let mut dinput = need_input.then(|| vec![0f32; ishape.count()]);
    let mut dweight_acc = need_weight.then(|| vec![0f64; wshape.count()]);
    let mut dbias_acc = need_weight.then(|| vec![0f64; co]);
    let mut patches = need_weight.then(|| vec![0f32; kdim * cols]);
    let mut dcols = need_input.then(|| vec![0f64; kdim * cols]);
    let mut din_acc = need_input.then(|| vec![0f64; ci * hw]);
    for n in 0..ishape.n {
        if let (Some(patches), Some(dw), Some(db)) =
            (patches.as_mut(), dweight_acc.as_mut(), dbias_acc.as_mut())
        {
            im2col(
                &input[n * ci * hw..][..ci * hw],
                ci,
                ishape.h,
                ishape.w,
                kh,
                kw,
                oh,
                ow,
                stride,
                padding,
                patches,
            );
            for oc in 0..co {
                let drow = &dout[(n * co + oc) * cols..][..cols];
                let mut b = 0f64;
                for &g in drow {
                    b += g as f64;
                }
                db[oc] += b;
                let blocks = kdim / 4;
                for kb in 0..blocks {
                    let k = kb * 4;
                    let d4 = dot4(
                        drow,
                        [
                            &patches[k * cols..][..cols],
                            &patches[(k + 1) * cols..][..cols],
                            &patches[(k + 2) * cols..][..cols],
                            &patches[(k + 3) * cols..][..cols],
                        ],
                    );
                    for (j, v) in d4.into_iter().enumerate() {
                        dw[oc * kdim + k + j] += v;
                    }
                }
                for k in blocks * 4..kdim {
                    dw[oc * kdim + k] += dot(drow, &patches[k * cols..][..cols]);
                }
            }
        }
        if let (Some(dcols), Some(din_acc), Some(dinput)) =
            (dcols.as_mut(), din_acc.as_mut(), dinput.as_mut())
        {
            for k in 0..kdim {
                let row = &mut dcols[k * cols..][..cols];
                row.fill(0.0);
                for oc in 0..co {
                    axpy(
                        row,
                        &dout[(n * co + oc) * cols..][..cols],
                        weight[oc * kdim + k] as f64,
                    );
                }
            }
            din_acc.fill(0.0);
            col2im_add(
                dcols,
                ci,
                ishape.h,
                ishape.w,
                kh,
                kw,
                oh,
                ow,
                stride,
                padding,
                din_acc,
            );
            let dst = &mut dinput[n * ci * hw..][..ci * hw];
            for (d, &a) in dst.iter_mut().zip(din_acc.iter()) {
                *d = a as f32;
            }
        }
    }
    (
        dinput,
        dweight_acc.map(|dw| {
            (
                dw.into_iter().map(|v| v as f32).collect(),
                dbias_acc.unwrap().into_iter().map(|v| v as f32).collect(),
            )
        }),
    )
}

/// Gradient of a convolution with respect to its input.
pub fn conv2d_backward_input(
    weight: &[f32],
    wshape: Shape,
    dout: &[f32],
    oshape: Shape,
    ishape: Shape,
    stride: usize,
    padding: usize,
) -> Vec<f32> {
    conv2d_backward(
        &[],
        ishape,
        weight,
        wshape,
        dout,
        oshape,
        stride,
        padding,
        true,
        false,
    )
    .0
    .unwrap()
}

/// Gradients of a convolution with respect to weight and bias.
pub fn conv2d_backward_weight(
    input: &[f32],
    ishape: Shape,
    dout: &[f32],
    oshape: Shape,
    wshape: Shape,
    stride: usize,
    padding: usize,
) -> (Vec<f32>, Vec<f32>) {
    conv2d_backward(
        input,
        ishape,
        &[],
        wshape,
        dout,
        oshape,
        stride,
        padding,
        false,
        true,
    )
    .1
    .unwrap()
}

/// Transposed 2-D convolution. `weight` is `(ci, co, kh, kw)`; the output
/// extent per axis is `(in - 1) * stride + kernel - 2 * padding`.
///
/// Computed as per-tap products with long contiguous rows: first
/// `g[(oc, ky, kx)] = sum_ic w[ic][oc][ky][kx] * in[ic]` over the input
/// grid, then the taps are scattered onto the output grid (the adjoint
/// unfold).
pub fn transposed_conv2d_forward(
    input: &[f32],
    ishape: Shape,
    weight: &[f32],
    wshape: Shape,
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
) -> Result<(Vec<f32>, Shape)> {
    let (ci, co, kh, kw) = (wshape.n, wshape.c, wshape.h, wshape.w);
    if ci != ishape.c {
        return Err(Error::shape(format!(
            "transposed-conv weight expects {ci} input channels, input has {}",
            ishape.c
        )));
    }
    let oh_full = (ishape.h - 1) * stride + kh;
    let ow_full = (ishape.w - 1) * stride + kw;
    if oh_full < 2 * padding + 1 || ow_full < 2 * padding + 1 {
        return Err(Error::shape(format!(
            "transposed-conv padding {padding} swallows the whole {oh_full}x{ow_full} output"
        )));
    }
    let (oh, ow) = (oh_full - 2 * padding, ow_full - 2 * padding);
    let oshape = Shape::new(ishape.n, co, oh, ow);
    let (hw, ohw) = (ishape.h * ishape.w, oh * ow);
    let ktaps = kh * kw;
    let mut out = vec![0f32; oshape.count()];
    let mut tap = vec![0f64; hw];
    let mut acc = vec![0f64; ohw];
    for n in 0..ishape.n {
        for oc in 0..co {
            acc.fill(bias.map(|b| b[oc] as f64).unwrap_or(0.0));
            for ky in 0..kh {
                for kx in 0..kw {
                    tap.fill(0.0);
                    for ic in 0..ci {
                        let wv = weight[((ic * co + oc) * kh + ky) * kw + kx] as f64;
                        axpy(&mut tap, &input[(n * ci + ic) * hw..][..hw], wv);
                    }
                    // Scatter this tap onto the output at offset
                    // (ky - p, kx - p) with input-grid stride.
                    let _ = ktaps;
                    for iy in 0..ishape.h {
                        let oy = (iy * stride + ky) as isize - padding as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        let ix_lo = padding.saturating_sub(kx).div_ceil(stride);
                        let max_ox = ow as isize - 1 - (kx as isize - padding as isize);
                        if max_ox < 0 {
                            continue;
                        }
                        let ix_hi = (max_ox as usize / stride + 1).min(ishape.w);
                        if ix_lo >= ix_hi {
                            continue;
                        }
                        let ox0 = ix_lo * stride + kx - padding;
                        if stride == 1 {
                            let src = &tap[iy * ishape.w + ix_lo..][..ix_hi - ix_lo];
                            let dst = &mut acc[oy as usize * ow + ox0..][..ix_hi - ix_lo];
                            for i in 0..dst.len() {
                                dst[i] += src[i];
                            }
                        } else {
                            for ix in ix_lo..ix_hi {
                                acc[oy as usize * ow + ix * stride + kx - padding] +=
                                    tap[iy * ishape.w + ix];
                            }
                        }
                    }
                }
            }
            let dst = &mut out[(n * co + oc) * ohw..][..ohw];
            for (d, &a) in dst.iter_mut().zip(acc.iter()) {
                *d = a as f32;
            }
        }
    }
    Ok((out, oshape))
}

/// Combined transposed-convolution backward: unfolds `dout` once per
/// image (`B[(oc, ky, kx)][input pixel] = dout[oc][iy*s+ky-p][ix*s+kx-p]`)
/// and produces whichever gradients are requested from long-row products.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub fn transposed_conv2d_backward(
    input: &[f32],
    ishape: Shape,
    weight: &[f32],
    wshape: Shape,
    dout: &[f32],
    oshape: Shape,
    stride: usize,
    padding: usize,
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<f32>>, Option<(Vec<f32>, Vec<f32>)>) {
    let (ci, co, kh, kw) = (wshape.n, wshape.c, wshape.h, wshape.w);
    let (oh, ow) = (oshape.h, oshape.w);
    let (hw, ohw, ktaps) = (ishape.h * ishape.w, oh * ow, kh * kw);
    let mut dinput = need_input.then(|| vec![0f32; ishape.count()]);
    let mut dweight_acc = need_weight.then(|| vec![0f64; wshape.count()]);
    let mut dbias_acc = need_weight.then(|| vec![0f64; co]);
    let mut unfolded = vec![0f32; co * ktaps * hw];
    let mut din_acc = need_input.then(|| vec![0f64; hw]);
    for n in 0..ishape.n {
        // Unfold dout onto the input grid for every (oc, ky, kx).
        for oc in 0..co {
            let dplane = &dout[(n * co + oc) * ohw..][..ohw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &mut unfolded[((oc * kh + ky) * kw + kx) * hw..][..hw];
                    row.fill(0.0);
                    let ix_lo = padding.saturating_sub(kx).div_ceil(stride);
                    let max_ox = ow as isize - 1 - (kx as isize - padding as isize);
                    if max_ox < 0 {
                        continue;
                    }
                    let ix_hi = (max_ox as usize / stride + 1).min(ishape.w);
                    if ix_lo >= ix_hi {
                        continue;
                    }
                    for iy in 0..ishape.h {
                        let oy = (iy * stride + ky) as isize - padding as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        let ox0 = ix_lo * stride + kx - padding;
                        if stride == 1 {
                            row[iy * ishape.w + ix_lo..iy * ishape.w + ix_hi]
                                .copy_from_slice(&dplane[oy as usize * ow + ox0..][..ix_hi - ix_lo]);
                        } else {
                            for ix in ix_lo..ix_hi {
                                row[iy * ishape.w + ix] =
                                    dplane[oy as usize * ow + ix * stride + kx - padding];
                            }
                        }
                    }
                }
            }
            if let Some(db) = dbias_acc.as_mut() {
                let mut b = 0f64;
                for &g in dplane {
                    b += g as f64;
                }
                db[oc] += b;
            }
        }
        if let (Some(dinput), Some(din_acc)) = (dinput.as_mut(), din_acc.as_mut()) {
            for ic in 0..ci {
                din_acc.fill(0.0);
                for oc in 0..co {
                    for t in 0..ktaps {
                        let wv = weight[(ic * co + oc) * ktaps + t] as f64;
                        axpy(din_acc, &unfolded[(oc * ktaps + t) * hw..][..hw], wv);
                    }
                }
                let dst = &mut dinput[(n * ci + ic) * hw..][..hw];
                for (d, &a) in dst.iter_mut().zip(din_acc.iter()) {
                    *d = a as f32;
                }
            }
        }
        if let Some(dw) = dweight_acc.as_mut() {
            for ic in 0..ci {
                let plane = &input[(n * ci + ic) * hw..][..hw];
                for oc in 0..co {
                    let blocks = ktaps / 4;
                    for tb in 0..blocks {
                        let t = tb * 4;
                        let d4 = dot4(
                            plane,
                            [
                                &unfolded[(oc * ktaps + t) * hw..][..hw],
                                &unfolded[(oc * ktaps + t + 1) * hw..][..hw],
                                &unfolded[(oc * ktaps + t + 2) * hw..][..hw],
                                &unfolded[(oc * ktaps + t + 3) * hw..][..hw],
                            ],
                        );
                        for (j, v) in d4.into_iter().enumerate() {
                            dw[(ic * co + oc) * ktaps + t + j] += v;
                        }
                    }
                    for t in blocks * 4..ktaps {
                        dw[(ic * co + oc) * ktaps + t] +=
                            dot(plane, &unfolded[(oc * ktaps + t) * hw..][..hw]);
                    }
                }
            }
        }
    }
    (
        dinput,
        dweight_acc.map(|dw| {
            (
                dw.into_iter().map(|v| v as f32).collect(),
                dbias_acc.unwrap().into_iter().map(|v| v as f32).collect(),
            )
        }),
    )
}

pub fn transposed_conv2d_backward_input(
    weight: &[f32],
    wshape: Shape,
    dout: &[f32],
    oshape: Shape,
    ishape: Shape,
    stride: usize,
    padding: usize,
) -> Vec<f32> {
    transposed_conv2d_backward(
        &[],
        ishape,
        weight,
        wshape,
        dout,
        oshape,
        stride,
        padding,
        true,
        false,
    )
    .0
    .unwrap()
}

pub fn transposed_conv2d_backward_weight(
    input: &[f32],
    ishape: Shape,
    dout: &[f32],
    oshape: Shape,
    wshape: Shape,
    stride: usize,
    padding: usize,
) -> (Vec<f32>, Vec<f32>) {
    transposed_conv2d_backward(
        input,
        ishape,
        &[],
        wshape,
        dout,
        oshape,
        stride,
        padding,
        false,
        true,
    )
    .1
    .unwrap()
}

/// Max pooling. Padded cells (when `padding > 0`) never win. Returns the
/// pooled values plus, per output element, the flat plane index of the
/// winning input cell (first occurrence in row-major window order on ties).
pub fn maxpool2d_forward(
    input: &[f32],
    ishape: Shape,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(Vec<f32>, Shape, Vec<u32>)> {
    if k < 1 {
        return Err(Error::contract("pooling window must be >= 1".to_string()));
    }
    if padding >= k {
        return Err(Error::contract(format!(
            "pooling padding {padding} must be smaller than the window {k}"
        )));
    }
    if ishape.h < k.saturating_sub(2 * padding) || ishape.w < k.saturating_sub(2 * padding)
        || ishape.h + 2 * padding < k
        || ishape.w + 2 * padding < k
    {
        return Err(Error::shape(format!(
            "pooling window {k} larger than padded input {}x{}",
            ishape.h, ishape.w
        )));
    }
    let oh = conv_out_dim(ishape.h, k, stride, padding)?;
    let ow = conv_out_dim(ishape.w, k, stride, padding)?;
    let oshape = Shape::new(ishape.n, ishape.c, oh, ow);
    let hw = ishape.h * ishape.w;
    let mut out = vec![0f32; oshape.count()];
    let mut argmax = vec![0u32; oshape.count()];
    for n in 0..ishape.n {
        for c in 0..ishape.c {
            let plane = &input[(n * ishape.c + c) * hw..][..hw];
            let base = (n * ishape.c + c) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0u32;
                    let mut found = false;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= ishape.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= ishape.w as isize {
                                continue;
                            }
                            let idx = iy as usize * ishape.w + ix as usize;
                            let v = plane[idx];
                            if !found || v > best {
                                best = v;
                                best_idx = idx as u32;
                                found = true;
                            }
                        }
                    }
                    out[base + oy * ow + ox] = best;
                    argmax[base + oy * ow + ox] = best_idx;
                }
            }
        }
    }
    Ok((out, oshape, argmax))
}

pub fn maxpool2d_backward(
    argmax: &[u32],
    dout: &[f32],
    oshape: Shape,
    ishape: Shape,
) -> Vec<f32> {
    let hw = ishape.h * ishape.w;
    let ohw = oshape.h * oshape.w;
    let mut dinput = vec![0f32; ishape.count()];
    for nc in 0..ishape.n * ishape.c {
        let dsrc = &dout[nc * ohw..][..ohw];
        let asrc = &argmax[nc * ohw..][..ohw];
        let dst = &mut dinput[nc * hw..][..hw];
        for (i, &g) in dsrc.iter().enumerate() {
            dst[asrc[i] as usize] += g;
        }
    }
    dinput
}

/// Per-channel mean and biased variance over `(n, h, w)`, two-pass.
pub fn batch_stats(input: &[f32], shape: Shape) -> (Vec<f64>, Vec<f64>) {
    let m = (shape.n * shape.h * shape.w) as f64;
    let hw = shape.h * shape.w;
    let mut mean = vec![0f64; shape.c];
    let mut var = vec![0f64; shape.c];
    for c in 0..shape.c {
        let mut sum = 0f64;
        for n in 0..shape.n {
            for &v in &input[(n * shape.c + c) * hw..][..hw] {
                sum += v as f64;
            }
        }
        let mu = sum / m;
        mean[c] = mu;
        let mut sq = 0f64;
        for n in 0..shape.n {
            for &v in &input[(n * shape.c + c) * hw..][..hw] {
                let d = v as f64 - mu;
                sq += d * d;
            }
        }
        var[c] = sq / m;
    }
    (mean, var)
}

/// Batch-norm normalization given per-channel mean and inverse std.
pub fn bn_apply(
    input: &[f32],
    shape: Shape,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f32],
    beta: &[f32],
) -> Vec<f32> {
    let hw = shape.h * shape.w;
    let mut out = vec![0f32; shape.count()];
    for n in 0..shape.n {
        for c in 0..shape.c {
            let (mu, is) = (mean[c], inv_std[c]);
            let (g, b) = (gamma[c] as f64, beta[c] as f64);
            let src = &input[(n * shape.c + c) * hw..][..hw];
            let dst = &mut out[(n * shape.c + c) * hw..][..hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (g * ((v as f64 - mu) * is) + b) as f32;
            }
        }
    }
    out
}

/// Training-mode batch-norm backward.
///
/// Returns `(dinput, dgamma, dbeta)`. Accounts for the dependence of the
/// batch statistics on the input.
pub fn bn_backward_train(
    input: &[f32],
    shape: Shape,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f32],
    dout: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let hw = shape.h * shape.w;
    let m = (shape.n * hw) as f64;
    let mut dinput = vec![0f32; shape.count()];
    let mut dgamma = vec![0f32; shape.c];
    let mut dbeta = vec![0f32; shape.c];
    for c in 0..shape.c {
        let (mu, is) = (mean[c], inv_std[c]);
        let mut sum_dy = 0f64;
        let mut sum_dy_xhat = 0f64;
        for n in 0..shape.n {
            let src = &input[(n * shape.c + c) * hw..][..hw];
            let d = &dout[(n * shape.c + c) * hw..][..hw];
            for (&v, &g) in src.iter().zip(d) {
                let xhat = (v as f64 - mu) * is;
                sum_dy += g as f64;
                sum_dy_xhat += g as f64 * xhat;
            }
        }
        dgamma[c] = sum_dy_xhat as f32;
        dbeta[c] = sum_dy as f32;
        let g = gamma[c] as f64;
        for n in 0..shape.n {
            let src = &input[(n * shape.c + c) * hw..][..hw];
            let d = &dout[(n * shape.c + c) * hw..][..hw];
            let dst = &mut dinput[(n * shape.c + c) * hw..][..hw];
            for ((&v, &gy), dd) in src.iter().zip(d).zip(dst.iter_mut()) {
                let xhat = (v as f64 - mu) * is;
                *dd = (g * is * (gy as f64 - sum_dy / m - xhat * sum_dy_xhat / m)) as f32;
            }
        }
    }
    (dinput, dgamma, dbeta)
}

/// Eval-mode batch-norm backward (statistics are constants).
pub fn bn_backward_eval(
    input: &[f32],
    shape: Shape,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f32],
    dout: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let hw = shape.h * shape.w;
    let mut dinput = vec![0f32; shape.count()];
    let mut dgamma = vec![0f32; shape.c];
    let mut dbeta = vec![0f32; shape.c];
    for c in 0..shape.c {
        let (mu, is) = (mean[c], inv_std[c]);
        let g = gamma[c] as f64;
        let mut sum_dy = 0f64;
        let mut sum_dy_xhat = 0f64;
        for n in 0..shape.n {
            let src = &input[(n * shape.c + c) * hw..][..hw];
            let d = &dout[(n * shape.c + c) * hw..][..hw];
            let dst = &mut dinput[(n * shape.c + c) * hw..][..hw];
            for ((&v, &gy), dd) in src.iter().zip(d).zip(dst.iter_mut()) {
                sum_dy += gy as f64;
                sum_dy_xhat += gy as f64 * (v as f64 - mu) * is;
                *dd = (g * is * gy as f64) as f32;
            }
        }
        dgamma[c] = sum_dy_xhat as f32;
        dbeta[c] = sum_dy as f32;
    }
    (dinput, dgamma, dbeta)
}

pub fn relu_forward(input: &[f32]) -> Vec<f32> {
    input.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu_backward(input: &[f32], dout: &[f32]) -> Vec<f32> {
    input
        .iter()
        .zip(dout)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

/// Global average pooling to `(n, c, 1, 1)`.
pub fn gap_forward(input: &[f32], shape: Shape) -> (Vec<f32>, Shape) {
    let hw = shape.h * shape.w;
    let mut out = vec![0f32; shape.n * shape.c];
    for nc in 0..shape.n * shape.c {
        let mut sum = 0f64;
        for &v in &input[nc * hw..][..hw] {
            sum += v as f64;
        }
        out[nc] = (sum / hw as f64) as f32;
    }
    (out, Shape::new(shape.n, shape.c, 1, 1))
}

pub fn gap_backward(dout: &[f32], ishape: Shape) -> Vec<f32> {
    let hw = ishape.h * ishape.w;
    let scale = 1.0 / hw as f64;
    let mut dinput = vec![0f32; ishape.count()];
    for nc in 0..ishape.n * ishape.c {
        let g = (dout[nc] as f64 * scale) as f32;
        dinput[nc * hw..(nc + 1) * hw].fill(g);
    }
    dinput
}

/// Fully connected layer on `(n, k, 1, 1)` inputs: `out = W x + b` with
/// `weight` `(c_out, k, 1, 1)`.
pub fn linear_forward(
    input: &[f32],
    ishape: Shape,
    weight: &[f32],
    wshape: Shape,
    bias: Option<&[f32]>,
) -> Result<(Vec<f32>, Shape)> {
    let k = ishape.c * ishape.h * ishape.w;
    if wshape.c != k {
        return Err(Error::shape(format!(
            "linear weight expects {} input features, input has {k}",
            wshape.c
        )));
    }
    let c_out = wshape.n;
    let mut out = vec![0f32; ishape.n * c_out];
    for n in 0..ishape.n {
        let x = &input[n * k..][..k];
        for c in 0..c_out {
            let w = &weight[c * k..][..k];
            let mut acc = bias.map(|b| b[c] as f64).unwrap_or(0.0);
            acc += dot(w, x);
            out[n * c_out + c] = acc as f32;
        }
    }
    Ok((out, Shape::new(ishape.n, c_out, 1, 1)))
}

pub fn linear_backward(
    input: &[f32],
    ishape: Shape,
    weight: &[f32],
    wshape: Shape,
    dout: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let k = ishape.c * ishape.h * ishape.w;
    let c_out = wshape.n;
    let mut dinput = vec![0f32; ishape.count()];
    let mut dweight = vec![0f32; wshape.count()];
    let mut dbias = vec![0f32; c_out];
    let mut dacc = vec![0f64; k];
    for n in 0..ishape.n {
        dacc.fill(0.0);
        for c in 0..c_out {
            let g = dout[n * c_out + c] as f64;
            axpy(&mut dacc, &weight[c * k..][..k], g);
        }
        for (d, &a) in dinput[n * k..][..k].iter_mut().zip(dacc.iter()) {
            *d = a as f32;
        }
    }
    let mut wacc = vec![0f64; k];
    for c in 0..c_out {
        wacc.fill(0.0);
        let mut bacc = 0f64;
        for n in 0..ishape.n {
            let g = dout[n * c_out + c] as f64;
            bacc += g;
            axpy(&mut wacc, &input[n * k..][..k], g);
        }
        dbias[c] = bacc as f32;
        for (d, &a) in dweight[c * k..][..k].iter_mut().zip(wacc.iter()) {
            *d = a as f32;
        }
    }
    (dinput, dweight, dbias)
}

/// Numerically stable softmax over the channel axis, per `(n, y, x)`.
pub fn softmax_channel_forward(input: &[f32], shape: Shape) -> Vec<f32> {
    let hw = shape.h * shape.w;
    let mut out = vec![0f32; shape.count()];
    for n in 0..shape.n {
        for p in 0..hw {
            let mut hi = f64::NEG_INFINITY;
            for c in 0..shape.c {
                hi = hi.max(input[(n * shape.c + c) * hw + p] as f64);
            }
            let mut z = 0f64;
            for c in 0..shape.c {
                z += ((input[(n * shape.c + c) * hw + p] as f64) - hi).exp();
            }
            for c in 0..shape.c {
                let e = ((input[(n * shape.c + c) * hw + p] as f64) - hi).exp();
                out[(n * shape.c + c) * hw + p] = (e / z) as f32;
            }
        }
    }
    out
}

pub fn softmax_channel_backward(output: &[f32], shape: Shape, dout: &[f32]) -> Vec<f32> {
    let hw = shape.h * shape.w;
    let mut dinput = vec![0f32; shape.count()];
    for n in 0..shape.n {
        for p in 0..hw {
            let mut inner = 0f64;
            for c in 0..shape.c {
                let idx = (n * shape.c + c) * hw + p;
                inner += output[idx] as f64 * dout[idx] as f64;
            }
            for c in 0..shape.c {
                let idx = (n * shape.c + c) * hw + p;
                dinput[idx] = (output[idx] as f64 * (dout[idx] as f64 - inner)) as f32;
            }
        }
    }
    dinput
}

/// 2x nearest-neighbour upsampling.
pub fn upsample_nearest2_forward(input: &[f32], shape: Shape) -> (Vec<f32>, Shape) {
    let (oh, ow) = (shape.h * 2, shape.w * 2);
    let oshape = Shape::new(shape.n, shape.c, oh, ow);
    let mut out = vec![0f32; oshape.count()];
    let hw = shape.h * shape.w;
    for nc in 0..shape.n * shape.c {
        let src = &input[nc * hw..][..hw];
        let dst = &mut out[nc * oh * ow..][..oh * ow];
        for oy in 0..oh {
            let iy = oy / 2;
            for ox in 0..ow {
                dst[oy * ow + ox] = src[iy * shape.w + ox / 2];
            }
        }
    }
    (out, oshape)
}

pub fn upsample_nearest2_backward(dout: &[f32], oshape: Shape, ishape: Shape) -> Vec<f32> {
    let hw = ishape.h * ishape.w;
    let (oh, ow) = (oshape.h, oshape.w);
    let mut dinput = vec![0f32; ishape.count()];
    for nc in 0..ishape.n * ishape.c {
        let src = &dout[nc * oh * ow..][..oh * ow];
        let dst = &mut dinput[nc * hw..][..hw];
        for oy in 0..oh {
            let iy = oy / 2;
            for ox in 0..ow {
                dst[iy * ishape.w + ox / 2] += src[oy * ow + ox];
            }
        }
    }
    dinput
}

/// Source coordinate and blend weight for one output position under the
/// half-pixel-centres convention.
#[inline]
fn bilinear_taps(o: usize, osize: usize, isize_: usize) -> (usize, usize, f64) {
    let scale = isize_ as f64 / osize as f64;
    let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (isize_ - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(isize_ - 1);
    (lo, hi, s - lo as f64)
}

/// Bilinear resize to an arbitrary target extent.
pub fn resize_bilinear_forward(
    input: &[f32],
    shape: Shape,
    oh: usize,
    ow: usize,
) -> Result<(Vec<f32>, Shape)> {
    if oh == 0 || ow == 0 {
        return Err(Error::shape("bilinear resize target must be nonzero".to_string()));
    }
    let oshape = Shape::new(shape.n, shape.c, oh, ow);
    let hw = shape.h * shape.w;
    let mut out = vec![0f32; oshape.count()];
    let xtaps: Vec<(usize, usize, f64)> =
        (0..ow).map(|ox| bilinear_taps(ox, ow, shape.w)).collect();
    for nc in 0..shape.n * shape.c {
        let src = &input[nc * hw..][..hw];
        let dst = &mut out[nc * oh * ow..][..oh * ow];
        for oy in 0..oh {
            let (y0, y1, fy) = bilinear_taps(oy, oh, shape.h);
            for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                let v00 = src[y0 * shape.w + x0] as f64;
                let v01 = src[y0 * shape.w + x1] as f64;
                let v10 = src[y1 * shape.w + x0] as f64;
                let v11 = src[y1 * shape.w + x1] as f64;
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                dst[oy * ow + ox] = (top + (bot - top) * fy) as f32;
            }
        }
    }
    Ok((out, oshape))
}

pub fn resize_bilinear_backward(dout: &[f32], oshape: Shape, ishape: Shape) -> Vec<f32> {
    let hw = ishape.h * ishape.w;
    let (oh, ow) = (oshape.h, oshape.w);
    let mut dinput = vec![0f64; ishape.count()];
    let xtaps: Vec<(usize, usize, f64)> =
        (0..ow).map(|ox| bilinear_taps(ox, ow, ishape.w)).collect();
    for nc in 0..ishape.n * ishape.c {
        let src = &dout[nc * oh * ow..][..oh * ow];
        let dst = &mut dinput[nc * hw..][..hw];
        for oy in 0..oh {
            let (y0, y1, fy) = bilinear_taps(oy, oh, ishape.h);
            for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                let g = src[oy * ow + ox] as f64;
                dst[y0 * ishape.w + x0] += g * (1.0 - fx) * (1.0 - fy);
                dst[y0 * ishape.w + x1] += g * fx * (1.0 - fy);
                dst[y1 * ishape.w + x0] += g * (1.0 - fx) * fy;
                dst[y1 * ishape.w + x1] += g * fx * fy;
            }
        }
    }
    dinput.into_iter().map(|v| v as f32).collect()
}

/// Channel concatenation of two tensors with equal `(n, h, w)`.
pub fn concat_channels_forward(
    a: &[f32],
    ashape: Shape,
    b: &[f32],
    bshape: Shape,
) -> Result<(Vec<f32>, Shape)> {
    if ashape.n != bshape.n || ashape.h != bshape.h || ashape.w != bshape.w {
        return Err(Error::shape(format!(
            "concat requires matching (n, h, w): {ashape} vs {bshape}"
        )));
    }
    let oshape = Shape::new(ashape.n, ashape.c + bshape.c, ashape.h, ashape.w);
    let hw = ashape.h * ashape.w;
    let mut out = vec![0f32; oshape.count()];
    for n in 0..ashape.n {
        let dst = &mut out[n * oshape.c * hw..][..oshape.c * hw];
        dst[..ashape.c * hw].copy_from_slice(&a[n * ashape.c * hw..][..ashape.c * hw]);
        dst[ashape.c * hw..].copy_from_slice(&b[n * bshape.c * hw..][..bshape.c * hw]);
    }
    Ok((out, oshape))
}

pub fn concat_channels_backward(
    dout: &[f32],
    oshape: Shape,
    ashape: Shape,
    bshape: Shape,
) -> (Vec<f32>, Vec<f32>) {
    let hw = ashape.h * ashape.w;
    let mut da = vec![0f32; ashape.count()];
    let mut db = vec![0f32; bshape.count()];
    for n in 0..ashape.n {
        let src = &dout[n * oshape.c * hw..][..oshape.c * hw];
        da[n * ashape.c * hw..][..ashape.c * hw].copy_from_slice(&src[..ashape.c * hw]);
        db[n * bshape.c * hw..][..bshape.c * hw].copy_from_slice(&src[ashape.c * hw..]);
    }
    (da, db)
}

/// Center crop to `(th, tw)`; offsets are `(h - th) / 2`, `(w - tw) / 2`.
pub fn center_crop_forward(
    input: &[f32],
    shape: Shape,
    th: usize,
    tw: usize,
) -> Result<(Vec<f32>, Shape)> {
    if th > shape.h || tw > shape.w {
        return Err(Error::shape(format!(
            "cannot crop {}x{} to {th}x{tw}",
            shape.h, shape.w
        )));
    }
    let (oy, ox) = ((shape.h - th) / 2, (shape.w - tw) / 2);
    let oshape = Shape::new(shape.n, shape.c, th, tw);
    let hw = shape.h * shape.w;
    let mut out = vec![0f32; oshape.count()];
    for nc in 0..shape.n * shape.c {
        let src = &input[nc * hw..][..hw];
        let dst = &mut out[nc * th * tw..][..th * tw];
        for y in 0..th {
            dst[y * tw..][..tw]
                .copy_from_slice(&src[(y + oy) * shape.w + ox..][..tw]);
        }
    }
    Ok((out, oshape))
}

pub fn center_crop_backward(dout: &[f32], oshape: Shape, ishape: Shape) -> Vec<f32> {
    let (th, tw) = (oshape.h, oshape.w);
    let (oy, ox) = ((ishape.h - th) / 2, (ishape.w - tw) / 2);
    let hw = ishape.h * ishape.w;
    let mut dinput = vec![0f32; ishape.count()];
    for nc in 0..ishape.n * ishape.c {
        let src = &dout[nc * th * tw..][..th * tw];
        let dst = &mut dinput[nc * hw..][..hw];
        for y in 0..th {
            dst[(y + oy) * ishape.w + ox..][..tw].copy_from_slice(&src[y * tw..][..tw]);
        }
    }
    dinput
}

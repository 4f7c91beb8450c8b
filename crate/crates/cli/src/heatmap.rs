//! Heatmap export: activation maps rendered with a perceptually ordered
//! colormap over the source image at 50% alpha.

use camforge_core::error::{Error, Result};

/// Viridis anchors (every 8th entry of the standard 256-color table);
/// intermediate values interpolate linearly.
const VIRIDIS: [[u8; 3]; 33] = [
    [68, 1, 84],
    [71, 13, 96],
    [72, 24, 106],
    [72, 35, 116],
    [71, 45, 123],
    [69, 55, 129],
    [66, 64, 134],
    [62, 73, 137],
    [59, 82, 139],
    [55, 91, 141],
    [51, 99, 141],
    [47, 107, 142],
    [44, 114, 142],
    [41, 122, 142],
    [38, 130, 142],
    [35, 137, 142],
    [33, 145, 140],
    [31, 152, 139],
    [30, 160, 136],
    [32, 167, 133],
    [37, 175, 128],
    [46, 182, 122],
    [58, 190, 115],
    [72, 197, 106],
    [89, 203, 95],
    [108, 210, 83],
    [127, 215, 69],
    [147, 221, 54],
    [168, 225, 38],
    [192, 229, 26],
    [213, 232, 31],
    [234, 235, 48],
    [253, 231, 37],
];

/// Color for a normalized value in `[0, 1]`.
pub fn colormap(v: f32) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0) * 32.0;
    let i = (v.floor() as usize).min(31);
    let f = v - i as f32;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (a[c] as f32 + (b[c] as f32 - a[c] as f32) * f).round() as u8;
    }
    out
}

/// Blends the colormapped values over the grayscale image at 50% alpha.
/// Both inputs are `h * w`, values in `[0, 1]`.
pub fn overlay(cam: &[f32], image: &[f32], h: usize, w: usize) -> Result<Vec<u8>> {
    if cam.len() != h * w || image.len() != h * w {
        return Err(Error::shape(format!(
            "heatmap overlay needs matching {h}x{w} inputs ({} and {})",
            cam.len(),
            image.len()
        )));
    }
    let mut rgb = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        let color = colormap(cam[i]);
        let gray = (image[i].clamp(0.0, 1.0) * 255.0).round();
        for c in 0..3 {
            rgb.push((0.5 * gray + 0.5 * color[c] as f32).round() as u8);
        }
    }
    Ok(rgb)
}

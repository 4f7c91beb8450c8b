//! Corpus loading: manifest-driven PNG ingestion into grayscale float
//! tensors in `[0, 1]`, with optional resizing to a working resolution.

use std::path::Path;

use crate::data::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::tensor::{LabelMask, Shape, Tensor};

#[derive(Debug, Clone)]
pub struct LoadedSample {
    /// File stem of the image, used for output naming.
    pub name: String,
    pub image: Tensor,
    pub label: usize,
    pub mask: Option<LabelMask>,
    pub split: Split,
    pub group: String,
}

pub struct LoadedDataset {
    pub classes: Vec<String>,
    pub size: usize,
    pub samples: Vec<LoadedSample>,
}

impl LoadedDataset {
    pub fn split(&self, split: Split) -> Vec<&LoadedSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// `(image, label)` pairs of one split, for classifier training.
    pub fn pairs(&self, split: Split) -> Vec<(Tensor, usize)> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| (s.image.clone(), s.label))
            .collect()
    }
}

fn load_gray(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Ok((values, h, w))
}

fn resize_image(values: Vec<f32>, h: usize, w: usize, target: usize) -> Result<Vec<f32>> {
    if (h, w) == (target, target) {
        return Ok(values);
    }
    let (out, _) =
        kernels::resize_bilinear_forward(&values, Shape::new(1, 1, h, w), target, target)?;
    Ok(out)
}

fn resize_mask_nearest(labels: Vec<u8>, h: usize, w: usize, target: usize) -> Vec<u8> {
    if (h, w) == (target, target) {
        return labels;
    }
    let mut out = vec![0u8; target * target];
    for oy in 0..target {
        let sy = ((oy as f64 + 0.5) * h as f64 / target as f64 - 0.5)
            .round()
            .clamp(0.0, (h - 1) as f64) as usize;
        for ox in 0..target {
            let sx = ((ox as f64 + 0.5) * w as f64 / target as f64 - 0.5)
                .round()
                .clamp(0.0, (w - 1) as f64) as usize;
            out[oy * target + ox] = labels[sy * w + sx];
        }
    }
    out
}

/// Loads a validated manifest into memory, resizing every image (and
/// mask) to `target_size`. Samples are ordered by image path.
pub fn load_corpus(manifest_path: &Path, target_size: usize) -> Result<LoadedDataset> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = manifest.entries.clone();
    entries.sort_by(|a, b| a.image.cmp(&b.image));
    let mut samples = Vec::with_capacity(entries.len());
    for e in &entries {
        let image_path = base.join(&e.image);
        let (values, h, w) = load_gray(&image_path)?;
        let image = Tensor::from_vec(
            Shape::new(1, 1, target_size, target_size),
            resize_image(values, h, w, target_size)?,
        )?;
        let mask = match &e.mask {
            Some(rel) => {
                let (mvals, mh, mw) = load_gray(&base.join(rel))?;
                if (mh, mw) != (h, w) {
                    return Err(Error::data(format!(
                        "mask {rel} is {mh}x{mw} but image {} is {h}x{w}",
                        e.image
                    )));
                }
                let labels: Vec<u8> = mvals.iter().map(|&v| u8::from(v >= 0.5)).collect();
                Some(LabelMask::new(
                    target_size,
                    target_size,
                    resize_mask_nearest(labels, mh, mw, target_size),
                )?)
            }
            None => None,
        };
        let name = Path::new(&e.image)
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::data(format!("cannot derive a stem from {}", e.image)))?
            .to_string();
        samples.push(LoadedSample {
            name,
            image,
            label: e.label,
            mask,
            split: e.split,
            group: e.group.clone(),
        });
    }
    Ok(LoadedDataset {
        classes: manifest.classes,
        size: target_size,
        samples,
    })
}

//! Training objectives: seeding loss over weakly-localized seed regions,
//! per-pixel cross-entropy against a dense pseudo-mask, their unweighted
//! sum, and the fused softmax cross-entropy used by the classifier.
//!
//! The segmentation losses operate on the network's softmax output; logs
//! are clamped at 1e-12 so exact zeros cannot produce infinities.

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::tensor::{LabelMask, Shape, Tensor};

const LOG_CLAMP: f64 = 1e-12;

/// Per-class seed-pixel sets produced by the weak localizer.
///
/// Sets are disjoint across classes and every location is in bounds; both
/// are enforced at construction.
#[derive(Debug, Clone)]
pub struct SeedRegions {
    num_classes: usize,
    h: usize,
    w: usize,
    sets: Vec<Vec<u32>>,
    owner: Vec<u8>,
}

const UNSEEDED: u8 = u8::MAX;

impl SeedRegions {
    pub fn new(num_classes: usize, h: usize, w: usize) -> Result<Self> {
        if num_classes == 0 || num_classes >= UNSEEDED as usize {
            return Err(Error::contract(format!(
                "seed regions need 1..{} classes, got {num_classes}",
                UNSEEDED
            )));
        }
        Ok(SeedRegions {
            num_classes,
            h,
            w,
            sets: vec![Vec::new(); num_classes],
            owner: vec![UNSEEDED; h * w],
        })
    }

    pub fn add(&mut self, class: usize, y: usize, x: usize) -> Result<()> {
        if class >= self.num_classes {
            return Err(Error::contract(format!(
                "seed class {class} out of range ({} classes)",
                self.num_classes
            )));
        }
        if y >= self.h || x >= self.w {
            return Err(Error::contract(format!(
                "seed location ({y}, {x}) outside {}x{}",
                self.h, self.w
            )));
        }
        let idx = y * self.w + x;
        match self.owner[idx] {
            UNSEEDED => {
                self.owner[idx] = class as u8;
                self.sets[class].push(idx as u32);
                Ok(())
            }
            prev if prev as usize == class => Ok(()),
            prev => Err(Error::contract(format!(
                "seed location ({y}, {x}) already labeled {prev}, cannot relabel {class}"
            ))),
        }
    }

    /// Seeds every pixel with its mask label: the weak localizer's output
    /// taken at face value (foreground where the mask is set, background
    /// elsewhere).
    pub fn from_mask(mask: &LabelMask, num_classes: usize) -> Result<Self> {
        let mut seeds = SeedRegions::new(num_classes, mask.h, mask.w)?;
        for y in 0..mask.h {
            for x in 0..mask.w {
                seeds.add(mask.get(y, x) as usize, y, x)?;
            }
        }
        Ok(seeds)
    }

    pub fn total(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn class_set(&self, class: usize) -> &[u32] {
        &self.sets[class]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

fn check_dist_shape(shape: Shape, seeds_or_targets: &str, h: usize, w: usize) -> Result<()> {
    if shape.h != h || shape.w != w {
        return Err(Error::shape(format!(
            "prediction is {}x{} but {seeds_or_targets} are {h}x{w}",
            shape.h, shape.w
        )));
    }
    Ok(())
}

/// Seeding loss: mean negative log-probability of the seeded class over
/// all seed locations, per image, averaged over the batch.
///
/// `y` is a per-pixel class distribution `(n, c, h, w)`; `seeds[i]`
/// belongs to batch image `i`. Images whose seed sets are empty
/// contribute zero; a batch with no seeds at all is an error.
pub fn seeding_loss(tape: &mut Tape, y: Var, seeds: &[SeedRegions]) -> Result<Var> {
    let yt = tape.value(y).clone();
    let shape = yt.shape();
    if seeds.len() != shape.n {
        return Err(Error::shape(format!(
            "{} seed sets for a batch of {}",
            seeds.len(),
            shape.n
        )));
    }
    for s in seeds {
        check_dist_shape(shape, "seeds", s.h, s.w)?;
        if s.num_classes > shape.c {
            return Err(Error::shape(format!(
                "seeds carry {} classes, prediction has {}",
                s.num_classes, shape.c
            )));
        }
    }
    let grand_total: usize = seeds.iter().map(SeedRegions::total).sum();
    if grand_total == 0 {
        return Err(Error::contract(
            "seeding loss over entirely empty seed regions".to_string(),
        ));
    }
    let hw = shape.h * shape.w;
    let data = yt.data();
    let mut acc = 0f64;
    for (i, s) in seeds.iter().enumerate() {
        let total = s.total();
        if total == 0 {
            continue;
        }
        let mut img_acc = 0f64;
        for c in 0..s.num_classes {
            let plane = &data[(i * shape.c + c) * hw..][..hw];
            for &u in s.class_set(c) {
                img_acc += (plane[u as usize] as f64).max(LOG_CLAMP).ln();
            }
        }
        acc -= img_acc / total as f64;
    }
    let exact = acc / shape.n as f64;
    let value = exact as f32;
    let seeds = seeds.to_vec();
    let back = Box::new(move |g: &[f32], need: &[bool]| {
        if !need[0] {
            return Vec::new();
        }
        let upstream = g[0] as f64;
        let mut dy = vec![0f32; shape.count()];
        let data = yt.data();
        for (i, s) in seeds.iter().enumerate() {
            let total = s.total();
            if total == 0 {
                continue;
            }
            let scale = upstream / (shape.n as f64 * total as f64);
            for c in 0..s.num_classes {
                let base = (i * shape.c + c) * hw;
                for &u in s.class_set(c) {
                    let p = data[base + u as usize] as f64;
                    if p > LOG_CLAMP {
                        dy[base + u as usize] -= (scale / p) as f32;
                    }
                }
            }
        }
        vec![(0, dy)]
    });
    Ok(tape.custom(Tensor::scalar(value), Some(exact), vec![y], back))
}

/// Per-pixel cross-entropy against dense label masks, mean-reduced over
/// every pixel of every image in the batch.
pub fn pixel_ce_loss(tape: &mut Tape, y: Var, targets: &[&LabelMask]) -> Result<Var> {
    let yt = tape.value(y).clone();
    let shape = yt.shape();
    if targets.len() != shape.n {
        return Err(Error::shape(format!(
            "{} target masks for a batch of {}",
            targets.len(),
            shape.n
        )));
    }
    for t in targets {
        check_dist_shape(shape, "targets", t.h, t.w)?;
        if let Some(&bad) = t.labels.iter().find(|&&l| l as usize >= shape.c) {
            return Err(Error::contract(format!(
                "target label {bad} out of range ({} classes)",
                shape.c
            )));
        }
    }
    let hw = shape.h * shape.w;
    let denom = (shape.n * hw) as f64;
    let data = yt.data();
    let mut acc = 0f64;
    for (i, t) in targets.iter().enumerate() {
        for (u, &label) in t.labels.iter().enumerate() {
            let p = data[(i * shape.c + label as usize) * hw + u] as f64;
            acc -= p.max(LOG_CLAMP).ln();
        }
    }
    let exact = acc / denom;
    let value = exact as f32;
    let targets: Vec<LabelMask> = targets.iter().map(|&t| t.clone()).collect();
    let back = Box::new(move |g: &[f32], need: &[bool]| {
        if !need[0] {
            return Vec::new();
        }
        let upstream = g[0] as f64;
        let mut dy = vec![0f32; shape.count()];
        let data = yt.data();
        for (i, t) in targets.iter().enumerate() {
            for (u, &label) in t.labels.iter().enumerate() {
                let idx = (i * shape.c + label as usize) * hw + u;
                let p = data[idx] as f64;
                if p > LOG_CLAMP {
                    dy[idx] -= (upstream / (denom * p)) as f32;
                }
            }
        }
        vec![(0, dy)]
    });
    Ok(tape.custom(Tensor::scalar(value), Some(exact), vec![y], back))
}

/// Unweighted sum of seeding loss (seeds from the fused-CAM pseudo-mask)
/// and pixel cross-entropy (targets from the CRF pseudo-mask).
///
/// When every seed set is empty, `empty_seed_fallback` selects between a
/// flagged CE-only loss (`fell_back = true`) and an error; an empty seed
/// batch is never silently treated as zero.
pub fn combined_loss(
    tape: &mut Tape,
    y: Var,
    seeds: &[SeedRegions],
    crf_targets: &[&LabelMask],
    empty_seed_fallback: bool,
) -> Result<(Var, bool)> {
    let ce = pixel_ce_loss(tape, y, crf_targets)?;
    let grand_total: usize = seeds.iter().map(SeedRegions::total).sum();
    if grand_total == 0 {
        if empty_seed_fallback {
            return Ok((ce, true));
        }
        return Err(Error::contract(
            "combined loss with empty seeds and no fallback configured".to_string(),
        ));
    }
    let seed = seeding_loss(tape, y, seeds)?;
    Ok((tape.add(seed, ce)?, false))
}

/// Fused softmax + cross-entropy on `(n, c, 1, 1)` logits, mean over the
/// batch. Numerically stable (log-sum-exp); used for classifier training.
pub fn softmax_ce_logits(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let lt = tape.value(logits).clone();
    let shape = lt.shape();
    if shape.h != 1 || shape.w != 1 {
        return Err(Error::shape(format!(
            "classification logits must be (n, c, 1, 1), got {shape}"
        )));
    }
    if labels.len() != shape.n {
        return Err(Error::shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            shape.n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= shape.c) {
        return Err(Error::contract(format!(
            "label {bad} out of range ({} classes)",
            shape.c
        )));
    }
    let c = shape.c;
    let data = lt.data();
    let mut acc = 0f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = &data[i * c..][..c];
        let hi = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let lse = hi + row.iter().map(|&v| ((v as f64) - hi).exp()).sum::<f64>().ln();
        acc += lse - row[label] as f64;
    }
    let exact = acc / shape.n as f64;
    let value = exact as f32;
    let labels = labels.to_vec();
    let back = Box::new(move |g: &[f32], need: &[bool]| {
        if !need[0] {
            return Vec::new();
        }
        let upstream = g[0] as f64 / shape.n as f64;
        let data = lt.data();
        let mut d = vec![0f32; shape.count()];
        for (i, &label) in labels.iter().enumerate() {
            let row = &data[i * c..][..c];
            let hi = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let z: f64 = row.iter().map(|&v| ((v as f64) - hi).exp()).sum();
            for j in 0..c {
                let p = ((row[j] as f64) - hi).exp() / z;
                let onehot = if j == label { 1.0 } else { 0.0 };
                d[i * c + j] = (upstream * (p - onehot)) as f32;
            }
        }
        vec![(0, d)]
    });
    Ok(tape.custom(Tensor::scalar(value), Some(exact), vec![logits], back))
}

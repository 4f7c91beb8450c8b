//! Mixed-UNet: a shared three-downsampling encoder feeding two parallel,
//! structurally identical decoder branches whose outputs are fused by
//! channel concatenation, a 1x1 convolution, and a per-pixel softmax.
//!
//! Every encoder step is two 3x3 conv+BN+ReLU followed by a 3x3 max pool
//! (stride 2, padding 1, so the resolution exactly halves); channels
//! double per step. Every decoder step upsamples 2x (nearest neighbour),
//! halves the channels with a 3x3 transposed convolution, concatenates
//! the matching encoder map (center-cropped when extents differ), and
//! applies two 3x3 conv+BN+ReLU.

use crate::error::{Error, Result};
use crate::nn::layers::{apply_bn_updates, BatchNorm2d, BnUpdate, Conv2d, TransposedConv2d};
use crate::nn::params::ParamStore;
use crate::nn::tape::{Tape, Var};
use crate::rng;
use crate::tensor::{LabelMask, Tensor};

/// Number of downsampling steps. Fixed by the architecture.
pub const DEPTH: usize = 3;

#[derive(Debug, Clone)]
pub struct MixedUNetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Channel count after the first encoder block; doubles at each
    /// downsampling and halves at each decoder step.
    pub base_channels: usize,
    /// Ablation variant with a single decoder branch; the fusion head
    /// then consumes `base_channels` instead of `2 * base_channels`.
    pub single_branch: bool,
}

impl Default for MixedUNetConfig {
    fn default() -> Self {
        MixedUNetConfig {
            in_channels: 1,
            num_classes: 2,
            base_channels: 64,
            single_branch: false,
        }
    }
}

impl MixedUNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return Err(Error::config(format!(
                "base_channels must be even and >= 2, got {}",
                self.base_channels
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::config("need at least 2 classes".to_string()));
        }
        Ok(())
    }

    pub fn branch_count(&self) -> usize {
        if self.single_branch {
            1
        } else {
            2
        }
    }
}

/// The single-branch ablation of a configuration.
pub fn single_branch_ablation(cfg: &MixedUNetConfig) -> MixedUNetConfig {
    MixedUNetConfig {
        single_branch: true,
        ..cfg.clone()
    }
}

struct DoubleConv {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

impl DoubleConv {
    fn new<R: rand::Rng>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut R,
    ) -> Self {
        DoubleConv {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), in_ch, out_ch, 3, 1, 1, false, rng),
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), out_ch),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1, false, rng),
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), out_ch),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        training: bool,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<Var> {
        let mut h = self.conv1.forward(tape, store, x)?;
        h = self.bn1.forward(tape, store, h, training, updates)?;
        h = tape.relu(h);
        h = self.conv2.forward(tape, store, h)?;
        h = self.bn2.forward(tape, store, h, training, updates)?;
        Ok(tape.relu(h))
    }

    /// Trainable parameters: two bias-free conv weights plus two BN
    /// scale/shift pairs.
    fn param_count(in_ch: usize, out_ch: usize) -> usize {
        out_ch * in_ch * 9 + 2 * out_ch + out_ch * out_ch * 9 + 2 * out_ch
    }
}

struct DecoderStep {
    up: TransposedConv2d,
    convs: DoubleConv,
}

impl DecoderStep {
    /// `in_ch` is the channel count entering the step; it leaves with
    /// `in_ch / 2`.
    fn new<R: rand::Rng>(store: &mut ParamStore, name: &str, in_ch: usize, rng: &mut R) -> Self {
        DecoderStep {
            up: TransposedConv2d::new(store, &format!("{name}.up"), in_ch, in_ch / 2, 3, 1, 1, false, rng),
            convs: DoubleConv::new(store, &format!("{name}.convs"), in_ch, in_ch / 2, rng),
        }
    }

    fn param_count(in_ch: usize) -> usize {
        in_ch * (in_ch / 2) * 9 + DoubleConv::param_count(in_ch, in_ch / 2)
    }
}

struct DecoderBranch {
    steps: Vec<DecoderStep>,
}

impl DecoderBranch {
    fn new<R: rand::Rng>(store: &mut ParamStore, name: &str, base: usize, rng: &mut R) -> Self {
        let steps = (0..DEPTH)
            .map(|i| DecoderStep::new(store, &format!("{name}.step{i}"), base << (DEPTH - i), rng))
            .collect();
        DecoderBranch { steps }
    }

    /// Decodes from the bottleneck, consuming encoder skips from deepest
    /// to shallowest.
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bottleneck: Var,
        skips: &[Var],
        training: bool,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<Var> {
        let mut x = bottleneck;
        for (step, &skip) in self.steps.iter().zip(skips.iter().rev()) {
            x = tape.upsample_nearest2(x);
            x = step.up.forward(tape, store, x)?;
            let xs = tape.value(x).shape();
            let ss = tape.value(skip).shape();
            // With padded convolutions the extents match and the crops
            // are no-ops; odd intermediate extents crop the larger map.
            let (th, tw) = (xs.h.min(ss.h), xs.w.min(ss.w));
            let xc = if (xs.h, xs.w) != (th, tw) {
                tape.center_crop(x, th, tw)?
            } else {
                x
            };
            let sc = if (ss.h, ss.w) != (th, tw) {
                tape.center_crop(skip, th, tw)?
            } else {
                skip
            };
            let cat = tape.concat_channels(xc, sc)?;
            x = step.convs.forward(tape, store, cat, training, updates)?;
        }
        Ok(x)
    }
}

pub struct MixedUNetModel {
    pub store: ParamStore,
    cfg: MixedUNetConfig,
    encoder: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    branches: Vec<DecoderBranch>,
    head: Conv2d,
}

impl MixedUNetModel {
    pub fn new(cfg: MixedUNetConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, seed, false)
    }

    /// Test-only initialization mode: both branches start from identical
    /// parameters (the same init stream), instead of independent streams.
    pub fn new_tied(cfg: MixedUNetConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, seed, true)
    }

    fn build(cfg: MixedUNetConfig, seed: u64, tied: bool) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let base = cfg.base_channels;
        let mut enc_rng = rng::stream(seed, "unet-encoder", 0);
        let mut encoder = Vec::new();
        let mut in_ch = cfg.in_channels;
        for i in 0..DEPTH {
            let out_ch = base << i;
            encoder.push(DoubleConv::new(
                &mut store,
                &format!("encoder.b{i}"),
                in_ch,
                out_ch,
                &mut enc_rng,
            ));
            in_ch = out_ch;
        }
        let bottleneck = DoubleConv::new(
            &mut store,
            "bottleneck",
            base << (DEPTH - 1),
            base << DEPTH,
            &mut enc_rng,
        );
        let mut branches = Vec::new();
        for b in 0..cfg.branch_count() {
            let stream = if tied { 0 } else { b as u64 };
            let mut rng = rng::stream(seed, "unet-branch", stream);
            branches.push(DecoderBranch::new(
                &mut store,
                &format!("branch{b}"),
                base,
                &mut rng,
            ));
        }
        let head = Conv2d::new(
            &mut store,
            "head",
            base * cfg.branch_count(),
            cfg.num_classes,
            1,
            1,
            0,
            true,
            &mut enc_rng,
        );
        Ok(MixedUNetModel {
            store,
            cfg,
            encoder,
            bottleneck,
            branches,
            head,
        })
    }

    pub fn config(&self) -> &MixedUNetConfig {
        &self.cfg
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.c != self.cfg.in_channels {
            return Err(Error::shape(format!(
                "expected {} input channels, got {}",
                self.cfg.in_channels, s.c
            )));
        }
        let multiple = 1 << DEPTH;
        if s.h % multiple != 0 || s.w % multiple != 0 {
            return Err(Error::shape(format!(
                "input extent {}x{} must be divisible by {multiple}",
                s.h, s.w
            )));
        }
        Ok(())
    }

    /// Full forward pass. Returns the per-pixel class distribution and
    /// the decoder branch outputs (before fusion).
    fn forward_inner(
        &self,
        tape: &mut Tape,
        x: Var,
        training: bool,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape.value(x))?;
        let mut skips = Vec::with_capacity(DEPTH);
        let mut h = x;
        for block in &self.encoder {
            let features = block.forward(tape, &self.store, h, training, updates)?;
            skips.push(features);
            h = tape.maxpool2d(features, 3, 2, 1)?;
        }
        let encoded = self.bottleneck.forward(tape, &self.store, h, training, updates)?;
        let mut branch_outputs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            branch_outputs.push(branch.forward(tape, &self.store, encoded, &skips, training, updates)?);
        }
        let fused = if branch_outputs.len() == 1 {
            branch_outputs[0]
        } else {
            tape.concat_channels(branch_outputs[0], branch_outputs[1])?
        };
        let logits = self.head.forward(tape, &self.store, fused)?;
        Ok((tape.softmax_channel(logits), branch_outputs))
    }

    pub fn forward_train(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut updates = Vec::new();
        let (y, _) = self.forward_inner(tape, x, true, &mut updates)?;
        apply_bn_updates(&mut self.store, updates);
        Ok(y)
    }

    pub fn forward_eval(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut updates = Vec::new();
        Ok(self.forward_inner(tape, x, false, &mut updates)?.0)
    }

    /// Eval forward that also exposes the per-branch decoder outputs.
    pub fn forward_eval_parts(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut updates = Vec::new();
        self.forward_inner(tape, x, false, &mut updates)
    }

    /// Per-pixel class distribution for one image.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let y = self.forward_eval(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    /// Hard segmentation of one image (argmax over the class axis).
    pub fn predict_mask(&self, image: &Tensor) -> Result<LabelMask> {
        let y = self.predict(image)?;
        let s = y.shape();
        let hw = s.h * s.w;
        let mut labels = vec![0u8; hw];
        for pix in 0..hw {
            let mut best = 0usize;
            for c in 1..s.c {
                if y.data()[c * hw + pix] > y.data()[best * hw + pix] {
                    best = c;
                }
            }
            labels[pix] = best as u8;
        }
        LabelMask::new(s.h, s.w, labels)
    }

    /// Swaps the parameter values of the two decoder branches in place.
    pub fn swap_branch_params(&mut self) -> Result<()> {
        if self.cfg.single_branch {
            return Err(Error::contract(
                "single-branch model has nothing to swap".to_string(),
            ));
        }
        let pairs: Vec<(crate::nn::params::ParamId, crate::nn::params::ParamId)> = self
            .store
            .iter()
            .filter(|(_, e)| e.name.starts_with("branch0."))
            .map(|(id, e)| {
                let twin = e.name.replacen("branch0.", "branch1.", 1);
                (id, self.store.find(&twin).expect("branch twin parameter"))
            })
            .collect();
        for (a, b) in pairs {
            let va = self.store.value(a).clone();
            let vb = self.store.value(b).clone();
            self.store.set_value(a, vb);
            self.store.set_value(b, va);
        }
        Ok(())
    }
}

/// One training sample for the segmentation network: an image plus the
/// two pseudo-masks that supervise it (seed regions from the fused-CAM
/// threshold, dense targets from the CRF refinement).
#[derive(Debug, Clone)]
pub struct SegSample {
    pub name: String,
    pub image: Tensor,
    pub seed_mask: LabelMask,
    pub crf_mask: LabelMask,
}

#[derive(Debug, Clone)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr_init: f64,
    pub gamma: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Applied per sample per epoch; the same geometric transform hits
    /// the image and both pseudo-masks.
    pub augment: Option<crate::data::augment::AugmentConfig>,
    /// Fall back to CE-only for batches whose seed sets are all empty
    /// (flagged in the history) instead of failing.
    pub empty_seed_fallback: bool,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            epochs: 30,
            batch: 4,
            lr_init: 1e-3,
            gamma: 0.9,
            weight_decay: 1e-4,
            seed: 7,
            augment: None,
            empty_seed_fallback: true,
        }
    }
}

/// Trains the segmentation network on pseudo-masks with the combined
/// objective (seeding loss on the seed masks, pixel cross-entropy on the
/// CRF masks), Adam, polynomial decay, and decoupled weight decay.
/// Deterministic for a fixed config seed.
pub fn train_segmentation(
    model: &mut MixedUNetModel,
    samples: &[SegSample],
    cfg: &SegTrainConfig,
) -> Result<Vec<crate::classifier::EpochRecord>> {
    use crate::classifier::{stack, EpochRecord};
    use crate::losses::{combined_loss, SeedRegions};
    use crate::nn::optim::{poly_lr, AdamConfig, AdamState, Scheduler};
    use rand::seq::SliceRandom;

    if samples.is_empty() {
        return Err(Error::config(
            "segmentation training requires a non-empty train split".to_string(),
        ));
    }
    let classes = model.cfg.num_classes;
    let steps_per_epoch = samples.len().div_ceil(cfg.batch.max(1));
    let mut sched = if cfg.lr_init > 0.0 {
        Some(Scheduler::new(
            cfg.lr_init,
            cfg.gamma,
            (cfg.epochs * steps_per_epoch) as u64,
        )?)
    } else {
        None
    };
    let mut adam = AdamState::new(
        &model.store,
        AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut history = Vec::new();
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = crate::rng::stream(cfg.seed, "seg-shuffle", epoch as u64);
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0f64;
        let mut correct = 0u64;
        let mut total = 0u64;
        for chunk in indices.chunks(cfg.batch.max(1)) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut seed_sets = Vec::with_capacity(chunk.len());
            let mut crf_masks = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &samples[i];
                let shape = s.image.shape();
                let (img, seed_mask, crf_mask) = match &cfg.augment {
                    Some(aug) => {
                        let mut arng = crate::rng::stream(
                            cfg.seed,
                            "seg-augment",
                            (epoch * samples.len() + i) as u64,
                        );
                        let (img, mut masks) = crate::data::augment::augment_with_masks(
                            s.image.data(),
                            shape.h,
                            shape.w,
                            &[&s.seed_mask, &s.crf_mask],
                            aug,
                            &mut arng,
                        )?;
                        let crf = masks.pop().unwrap();
                        let seeds = masks.pop().unwrap();
                        (Tensor::from_vec(shape, img)?, seeds, crf)
                    }
                    None => (s.image.clone(), s.seed_mask.clone(), s.crf_mask.clone()),
                };
                images.push(img);
                seed_sets.push(SeedRegions::from_mask(&seed_mask, classes)?);
                crf_masks.push(crf_mask);
            }
            let image_refs: Vec<&Tensor> = images.iter().collect();
            let crf_refs: Vec<&LabelMask> = crf_masks.iter().collect();
            let mut tape = Tape::new();
            let x = tape.constant(stack(&image_refs)?);
            let y = model.forward_train(&mut tape, x)?;
            let (loss, _fell_back) =
                combined_loss(&mut tape, y, &seed_sets, &crf_refs, cfg.empty_seed_fallback)?;
            let loss_val = tape.value(loss).scalar_value()? as f64;
            if !loss_val.is_finite() {
                return Err(Error::contract(format!(
                    "segmentation loss diverged at epoch {epoch}"
                )));
            }
            epoch_loss += loss_val * chunk.len() as f64;
            // Training pixel accuracy against the CRF targets.
            let yt = tape.value(y);
            let s = yt.shape();
            let hw = s.h * s.w;
            for (bi, crf) in crf_refs.iter().enumerate() {
                for pix in 0..hw {
                    let mut best = 0usize;
                    for c in 1..s.c {
                        if yt.data()[(bi * s.c + c) * hw + pix]
                            > yt.data()[(bi * s.c + best) * hw + pix]
                        {
                            best = c;
                        }
                    }
                    if best as u8 == crf.labels[pix] {
                        correct += 1;
                    }
                }
                total += hw as u64;
            }
            let grads = tape.backward(loss)?;
            model.store.zero_grads();
            grads.accumulate_into(&tape, &mut model.store);
            drop(tape);
            let lr = match &mut sched {
                Some(sc) => {
                    let lr = poly_lr(sc)?;
                    sc.advance();
                    lr
                }
                None => 0.0,
            };
            adam.step(&mut model.store, lr);
        }
        history.push(EpochRecord {
            epoch,
            split: "train",
            loss: epoch_loss / samples.len() as f64,
            accuracy: correct as f64 / total as f64,
        });
    }
    Ok(history)
}

/// Deterministic count of trainable scalars for a configuration.
///
/// Per double-conv block (in -> out): `out*in*9` and `out*out*9` conv
/// scalars (bias-free, batch norm follows) plus `2*out` per batch norm.
/// Per decoder step entering with `c` channels: a transposed conv
/// `c*(c/2)*9` plus a double conv `(c -> c/2)`. The fusion head is a 1x1
/// conv from `branches * base` channels to `num_classes`, with bias.
pub fn param_count(cfg: &MixedUNetConfig) -> usize {
    let base = cfg.base_channels;
    let mut total = 0usize;
    let mut in_ch = cfg.in_channels;
    for i in 0..DEPTH {
        total += DoubleConv::param_count(in_ch, base << i);
        in_ch = base << i;
    }
    total += DoubleConv::param_count(base << (DEPTH - 1), base << DEPTH);
    let per_branch: usize = (0..DEPTH).map(|i| DecoderStep::param_count(base << (DEPTH - i))).sum();
    total += cfg.branch_count() * per_branch;
    let head_in = base * cfg.branch_count();
    total += cfg.num_classes * head_in + cfg.num_classes;
    total
}

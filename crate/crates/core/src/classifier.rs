//! Image-level classifier with a global-average-pooling head.
//!
//! The backbone is four conv blocks (two 3x3 conv+BN+ReLU then a 2x2 max
//! pool each, channels 16-32-64-64 by default); the head is a bias-free
//! linear map from the pooled features to class scores, so the head
//! weights double as activation-map weights: the pre-softmax score of
//! class c is exactly the weighted sum of feature-map means.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::layers::{apply_bn_updates, BatchNorm2d, BnUpdate, Conv2d, Linear};
use crate::nn::optim::{poly_lr, AdamConfig, AdamState, Scheduler};
use crate::nn::params::ParamStore;
use crate::nn::tape::{Tape, Var};
use crate::losses::softmax_ce_logits;
use crate::rng;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub channels: Vec<usize>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            in_channels: 1,
            num_classes: 2,
            channels: vec![16, 32, 64, 64],
        }
    }
}

struct ClsBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

pub struct ClassifierModel {
    pub store: ParamStore,
    cfg: ClassifierConfig,
    blocks: Vec<ClsBlock>,
    head: Linear,
}

/// Output of a single-image classification.
pub struct Classification {
    /// Softmax class probabilities.
    pub probs: Vec<f32>,
    /// Pre-softmax class scores.
    pub logits: Vec<f32>,
    /// Feature maps entering the global average pool, `(1, k, h, w)`.
    pub features: Tensor,
}

impl ClassifierModel {
    pub fn new(cfg: ClassifierConfig, seed: u64) -> Result<Self> {
        if cfg.num_classes < 2 {
            return Err(Error::config("classifier needs at least 2 classes".to_string()));
        }
        if cfg.channels.is_empty() {
            return Err(Error::config("classifier needs at least one block".to_string()));
        }
        let mut store = ParamStore::new();
        let mut rng = rng::stream(seed, "classifier-init", 0);
        let mut blocks = Vec::new();
        let mut in_ch = cfg.in_channels;
        for (i, &out_ch) in cfg.channels.iter().enumerate() {
            let name = format!("backbone.b{i}");
            blocks.push(ClsBlock {
                conv1: Conv2d::new(&mut store, &format!("{name}.conv1"), in_ch, out_ch, 3, 1, 1, false, &mut rng),
                bn1: BatchNorm2d::new(&mut store, &format!("{name}.bn1"), out_ch),
                conv2: Conv2d::new(&mut store, &format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1, false, &mut rng),
                bn2: BatchNorm2d::new(&mut store, &format!("{name}.bn2"), out_ch),
            });
            in_ch = out_ch;
        }
        let head = Linear::new(&mut store, "head", in_ch, cfg.num_classes, false, &mut rng);
        Ok(ClassifierModel {
            store,
            cfg,
            blocks,
            head,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    pub fn feature_channels(&self) -> usize {
        *self.cfg.channels.last().unwrap()
    }

    /// Smallest input extent the backbone accepts (one pixel must survive
    /// every pooling stage).
    pub fn min_input_extent(&self) -> usize {
        1 << self.blocks.len()
    }

    /// Head weight tensor `(num_classes, k, 1, 1)`.
    pub fn head_weight(&self) -> &Tensor {
        self.store.value(self.head.weight)
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != self.cfg.in_channels {
            return Err(Error::shape(format!(
                "classifier expects {} input channels, got {}",
                self.cfg.in_channels, shape.c
            )));
        }
        let min = self.min_input_extent();
        if shape.h < min || shape.w < min {
            return Err(Error::shape(format!(
                "classifier input {}x{} below the backbone minimum {min}x{min}",
                shape.h, shape.w
            )));
        }
        Ok(())
    }

    /// Shared forward pass: returns `(features, logits)` where features
    /// are the pre-GAP maps.
    fn forward_inner(
        &self,
        tape: &mut Tape,
        x: Var,
        training: bool,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<(Var, Var)> {
        self.check_input(tape.value(x).shape())?;
        let mut h = x;
        for b in &self.blocks {
            h = b.conv1.forward(tape, &self.store, h)?;
            h = b.bn1.forward(tape, &self.store, h, training, updates)?;
            h = tape.relu(h);
            h = b.conv2.forward(tape, &self.store, h)?;
            h = b.bn2.forward(tape, &self.store, h, training, updates)?;
            h = tape.relu(h);
            h = tape.maxpool2d(h, 2, 2, 0)?;
        }
        let features = h;
        let pooled = tape.gap(features);
        let logits = self.head.forward(tape, &self.store, pooled)?;
        Ok((features, logits))
    }

    /// Training-mode forward; applies batch-norm running-stat updates.
    pub fn forward_train(&mut self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let mut updates = Vec::new();
        let out = self.forward_inner(tape, x, true, &mut updates)?;
        apply_bn_updates(&mut self.store, updates);
        Ok(out)
    }

    /// Eval-mode forward (running statistics, no side effects).
    pub fn forward_eval(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let mut updates = Vec::new();
        self.forward_inner(tape, x, false, &mut updates)
    }

    /// Classifies one image, returning class probabilities together with
    /// the pre-GAP feature maps needed for activation mapping.
    pub fn classify(&self, image: &Tensor) -> Result<Classification> {
        let image = adapt_channels(image, self.cfg.in_channels)?;
        if image.shape().n != 1 {
            return Err(Error::shape(format!(
                "classify takes a single image, got batch of {}",
                image.shape().n
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant(image);
        let (features, logits) = self.forward_eval(&mut tape, x)?;
        let logits_vec = tape.value(logits).data().to_vec();
        let probs = softmax_row(&logits_vec);
        Ok(Classification {
            probs,
            logits: logits_vec,
            features: tape.value(features).clone(),
        })
    }
}

fn softmax_row(logits: &[f32]) -> Vec<f32> {
    let hi = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = logits.iter().map(|&v| ((v as f64) - hi).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / z) as f32).collect()
}

/// Replicates a grayscale image across channels when the model expects
/// more than one; any other mismatch is an error.
pub fn adapt_channels(image: &Tensor, want: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.c == want {
        return Ok(image.clone());
    }
    if s.c == 1 {
        let hw = s.h * s.w;
        let mut data = Vec::with_capacity(s.n * want * hw);
        for n in 0..s.n {
            for _ in 0..want {
                data.extend_from_slice(image.plane(n, 0));
            }
        }
        return Tensor::from_vec(Shape::new(s.n, want, s.h, s.w), data);
    }
    Err(Error::shape(format!(
        "cannot adapt {} channels to {want}",
        s.c
    )))
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr_init: f64,
    /// Polynomial decay exponent.
    pub gamma: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop once validation accuracy reaches this value (and at least
    /// `min_epochs` have run).
    pub early_stop_val_acc: Option<f64>,
    pub min_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch: 4,
            lr_init: 1e-3,
            gamma: 0.9,
            weight_decay: 1e-4,
            seed: 7,
            early_stop_val_acc: Some(1.0),
            min_epochs: 8,
        }
    }
}

/// One row of the training history CSV.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
}

/// Stacks single-image tensors into one batch.
pub fn stack(images: &[&Tensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::contract("cannot stack an empty batch".to_string()))?
        .shape();
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        let s = img.shape();
        if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
            return Err(Error::shape(format!(
                "cannot stack {} with {first}",
                img.shape()
            )));
        }
        data.extend_from_slice(img.data());
        n += s.n;
    }
    Tensor::from_vec(Shape::new(n, first.c, first.h, first.w), data)
}

/// Mean loss and accuracy of the model over labeled images (eval mode).
pub fn evaluate_accuracy(
    model: &ClassifierModel,
    data: &[(Tensor, usize)],
    batch: usize,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty split".to_string()));
    }
    let mut correct = 0usize;
    let mut loss_acc = 0f64;
    for chunk in data.chunks(batch.max(1)) {
        let images: Vec<&Tensor> = chunk.iter().map(|(t, _)| t).collect();
        let labels: Vec<usize> = chunk.iter().map(|(_, l)| *l).collect();
        let mut tape = Tape::new();
        let x = tape.constant(stack(&images)?);
        let (_, logits) = model.forward_eval(&mut tape, x)?;
        let loss = softmax_ce_logits(&mut tape, logits, &labels)?;
        loss_acc += tape.value(loss).scalar_value()? as f64 * labels.len() as f64;
        let lv = tape.value(logits);
        for (i, &label) in labels.iter().enumerate() {
            if argmax(&lv.data()[i * model.num_classes()..][..model.num_classes()]) == label {
                correct += 1;
            }
        }
    }
    Ok((loss_acc / data.len() as f64, correct as f64 / data.len() as f64))
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains the classifier on image-level labels with Adam, polynomial
/// learning-rate decay, and decoupled weight decay. Deterministic for a
/// fixed config seed. Returns the per-epoch history.
pub fn train_classifier(
    model: &mut ClassifierModel,
    train: &[(Tensor, usize)],
    val: &[(Tensor, usize)],
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::config(
            "classifier training requires non-empty train and val splits".to_string(),
        ));
    }
    let mut label_seen = vec![false; model.num_classes()];
    for (_, l) in train {
        if *l >= model.num_classes() {
            return Err(Error::config(format!(
                "label {l} out of range for {} classes",
                model.num_classes()
            )));
        }
        label_seen[*l] = true;
    }
    if label_seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::config(
            "classifier training requires examples from at least two classes".to_string(),
        ));
    }
    let steps_per_epoch = train.len().div_ceil(cfg.batch.max(1));
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
    let mut indices: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(cfg.seed, "cls-shuffle", epoch as u64);
        indices.shuffle(&mut rng);
        let mut train_loss = 0f64;
        let mut train_correct = 0usize;
        for chunk in indices.chunks(cfg.batch.max(1)) {
            let images: Vec<&Tensor> = chunk.iter().map(|&i| &train[i].0).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].1).collect();
            let mut tape = Tape::new();
            let x = tape.constant(stack(&images)?);
            let (_, logits) = model.forward_train(&mut tape, x)?;
            let loss = softmax_ce_logits(&mut tape, logits, &labels)?;
            let loss_val = tape.value(loss).scalar_value()? as f64;
            if !loss_val.is_finite() {
                return Err(Error::contract(format!(
                    "classifier loss diverged at epoch {epoch}"
                )));
            }
            train_loss += loss_val * labels.len() as f64;
            let lv = tape.value(logits);
            for (i, &label) in labels.iter().enumerate() {
                if argmax(&lv.data()[i * model.num_classes()..][..model.num_classes()]) == label {
                    train_correct += 1;
                }
            }
            let grads = tape.backward(loss)?;
            model.store.zero_grads();
            grads.accumulate_into(&tape, &mut model.store);
            drop(tape);
            let lr = match &mut sched {
                Some(s) => {
                    let lr = poly_lr(s)?;
                    s.advance();
                    lr
                }
                None => 0.0,
            };
            adam.step(&mut model.store, lr);
        }
        history.push(EpochRecord {
            epoch,
            split: "train",
            loss: train_loss / train.len() as f64,
            accuracy: train_correct as f64 / train.len() as f64,
        });
        let (val_loss, val_acc) = evaluate_accuracy(model, val, cfg.batch)?;
        history.push(EpochRecord {
            epoch,
            split: "val",
            loss: val_loss,
            accuracy: val_acc,
        });
        if let Some(target) = cfg.early_stop_val_acc {
            if val_acc >= target && epoch + 1 >= cfg.min_epochs {
                break;
            }
        }
    }
    Ok(history)
}

//! Layer wrappers: parameter registration, initialization, and tape
//! forward calls.
//!
//! Initialization is Kaiming-style fan-in scaling for conv, transposed
//! conv, and linear weights, zeros for biases, and (1, 0) for batch-norm
//! scale/shift.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

fn kaiming<R: Rng>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let data = (0..shape.count())
        .map(|_| normal.sample(rng) as f32)
        .collect();
    Tensor::from_vec(shape, data).expect("kaiming shape")
}

pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let wshape = Shape::new(out_ch, in_ch, k, k);
        let weight = store.add(
            format!("{name}.weight"),
            kaiming(wshape, in_ch * k * k, rng),
            true,
            true,
        );
        // A bias feeding straight into a batch norm is a dead parameter
        // (the batch mean removes any per-channel shift), so such convs
        // are built without one.
        let bias = with_bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Tensor::zeros(Shape::new(1, out_ch, 1, 1)),
                true,
                false,
            )
        });
        Conv2d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|id| tape.param(store, id));
        tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

pub struct TransposedConv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl TransposedConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        // Transposed-conv weights are (in, out, kh, kw).
        let wshape = Shape::new(in_ch, out_ch, k, k);
        let weight = store.add(
            format!("{name}.weight"),
            kaiming(wshape, in_ch * k * k, rng),
            true,
            true,
        );
        let bias = with_bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Tensor::zeros(Shape::new(1, out_ch, 1, 1)),
                true,
                false,
            )
        });
        TransposedConv2d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|id| tape.param(store, id));
        tape.transposed_conv2d(x, w, b, self.stride, self.padding)
    }
}

pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let wshape = Shape::new(out_features, in_features, 1, 1);
        let weight = store.add(
            format!("{name}.weight"),
            kaiming(wshape, in_features, rng),
            true,
            true,
        );
        let bias = with_bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Tensor::zeros(Shape::new(1, out_features, 1, 1)),
                true,
                false,
            )
        });
        Linear { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|id| tape.param(store, id));
        tape.linear(x, w, b)
    }
}

/// Deferred running-statistics update produced by a training-mode forward.
pub struct BnUpdate {
    pub param: ParamId,
    pub value: Tensor,
}

pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        BatchNorm2d {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(shape, 1.0), true, false),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(shape), true, false),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(shape), false, false),
            running_var: store.add(format!("{name}.running_var"), Tensor::full(shape, 1.0), false, false),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Forward pass. In training mode the batch statistics are used and a
    /// running-statistics update is appended to `updates`; the caller
    /// applies those to the store once the forward pass completes.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        training: bool,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        if training {
            let (out, stats) = tape.batchnorm_train(x, g, b, self.eps)?;
            let rm = store.value(self.running_mean).data();
            let rv = store.value(self.running_var).data();
            let shape = store.value(self.running_mean).shape();
            let new_mean: Vec<f32> = rm
                .iter()
                .zip(&stats.mean)
                .map(|(&old, &batch)| ((1.0 - self.momentum) * old as f64 + self.momentum * batch) as f32)
                .collect();
            let new_var: Vec<f32> = rv
                .iter()
                .zip(&stats.var)
                .map(|(&old, &batch)| ((1.0 - self.momentum) * old as f64 + self.momentum * batch) as f32)
                .collect();
            updates.push(BnUpdate {
                param: self.running_mean,
                value: Tensor::from_vec(shape, new_mean)?,
            });
            updates.push(BnUpdate {
                param: self.running_var,
                value: Tensor::from_vec(shape, new_var)?,
            });
            Ok(out)
        } else {
            tape.batchnorm_eval(
                x,
                g,
                b,
                store.value(self.running_mean),
                store.value(self.running_var),
                self.eps,
            )
        }
    }
}

/// Applies deferred batch-norm running-statistics updates.
pub fn apply_bn_updates(store: &mut ParamStore, updates: Vec<BnUpdate>) {
    for u in updates {
        store.set_value(u.param, u.value);
    }
}

//! Reverse-mode differentiation tape.
//!
//! Operations append nodes holding their forward value and a backward
//! closure; [`Tape::backward`] walks the nodes in reverse creation order
//! (a topological order by construction) and accumulates gradients.
//! Gradients are only propagated into subgraphs that contain an `input`
//! or `param` leaf, so constant data (images, targets) costs nothing.

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Computes gradient contributions for a node's parents.
/// Arguments: upstream gradient, per-parent "is gradient needed" flags.
type BackwardFn = Box<dyn Fn(&[f32], &[bool]) -> Vec<(usize, Vec<f32>)>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
    /// Pre-rounding value of scalar reductions, kept so finite-difference
    /// oracles can evaluate the objective at full f64 precision.
    exact_scalar: Option<f64>,
}

/// Per-channel batch statistics captured by a training-mode batch norm.
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        param: Option<ParamId>,
    ) -> Var {
        let requires_grad =
            param.is_some() || parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            parents,
            requires_grad,
            backward,
            param,
            exact_scalar: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient (input images, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad: false,
            backward: None,
            param: None,
            exact_scalar: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is wanted (used by gradient checks).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad: true,
            backward: None,
            param: None,
            exact_scalar: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter; `Gradients::accumulate_into`
    /// routes its gradient back to the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            parents: Vec::new(),
            requires_grad: true,
            backward: None,
            param: Some(id),
            exact_scalar: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xt = self.value(x).clone();
        let wt = self.value(weight).clone();
        let bt = bias.map(|b| self.value(b).clone());
        if let Some(ref b) = bt {
            if b.shape().count() != wt.shape().n {
                return Err(Error::shape(format!(
                    "conv bias has {} entries for {} output channels",
                    b.shape().count(),
                    wt.shape().n
                )));
            }
        }
        let (out, oshape) = kernels::conv2d_forward(
            xt.data(),
            xt.shape(),
            wt.data(),
            wt.shape(),
            bt.as_ref().map(|b| b.data()),
            stride,
            padding,
        )?;
        let mut parents = vec![x.0, weight.0];
        if let Some(b) = bias {
            parents.push(b.0);
        }
        let (ishape, wshape) = (xt.shape(), wt.shape());
        let has_bias = bias.is_some();
        let back: BackwardFn = Box::new(move |g, need| {
            let need_w = need[1] || (has_bias && need[2]);
            let (dx, dwb) = kernels::conv2d_backward(
                xt.data(),
                ishape,
                wt.data(),
                wshape,
                g,
                oshape,
                stride,
                padding,
                need[0],
                need_w,
            );
            let mut out = Vec::new();
            if let Some(dx) = dx {
                out.push((0, dx));
            }
            if let Some((dw, db)) = dwb {
                if need[1] {
                    out.push((1, dw));
                }
                if has_bias && need[2] {
                    out.push((2, db));
                }
            }
            out
        });
        Ok(self.push(Tensor::from_vec(oshape, out)?, parents, Some(back), None))
    }

    pub fn transposed_conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xt = self.value(x).clone();
        let wt = self.value(weight).clone();
        let bt = bias.map(|b| self.value(b).clone());
        let (out, oshape) = kernels::transposed_conv2d_forward(
            xt.data(),
            xt.shape(),
            wt.data(),
            wt.shape(),
            bt.as_ref().map(|b| b.data()),
            stride,
            padding,
        )?;
        let mut parents = vec![x.0, weight.0];
        if let Some(b) = bias {
            parents.push(b.0);
        }
        let (ishape, wshape) = (xt.shape(), wt.shape());
        let has_bias = bias.is_some();
        let back: BackwardFn = Box::new(move |g, need| {
            let need_w = need[1] || (has_bias && need[2]);
            let (dx, dwb) = kernels::transposed_conv2d_backward(
                xt.data(),
                ishape,
                wt.data(),
                wshape,
                g,
                oshape,
                stride,
                padding,
                need[0],
                need_w,
            );
            let mut out = Vec::new();
            if let Some(dx) = dx {
                out.push((0, dx));
            }
            if let Some((dw, db)) = dwb {
                if need[1] {
                    out.push((1, dw));
                }
                if has_bias && need[2] {
                    out.push((2, db));
                }
            }
            out
        });
        Ok(self.push(Tensor::from_vec(oshape, out)?, parents, Some(back), None))
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let xt = self.value(x).clone();
        let (out, oshape, argmax) =
            kernels::maxpool2d_forward(xt.data(), xt.shape(), k, stride, padding)?;
        let ishape = xt.shape();
        let back: BackwardFn = Box::new(move |g, need| {
            if !need[0] {
                return Vec::new();
            }
            vec![(0, kernels::maxpool2d_backward(&argmax, g, oshape, ishape))]
        });
        Ok(self.push(Tensor::from_vec(oshape, out)?, vec![x.0], Some(back), None))
    }

    /// Training-mode batch norm: normalizes with batch statistics and
    /// returns them so the caller can update running estimates.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let xt = self.value(x).clone();
        let gt = self.value(gamma).clone();
        let bt = self.value(beta).clone();
        let shape = xt.shape();
        if gt.shape().count() != shape.c || bt.shape().count() != shape.c {
            return Err(Error::shape(format!(
                "batchnorm scale/shift must have {} entries",
                shape.c
            )));
        }
        if shape.count() == 0 || shape.n == 0 {
            return Err(Error::contract(
                "batchnorm on an empty batch".to_string(),
            ));
        }
        let (mean, var) = kernels::batch_stats(xt.data(), shape);
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let out = kernels::bn_apply(xt.data(), shape, &mean, &inv_std, gt.data(), bt.data());
        let stats = BatchStats {
            mean: mean.clone(),
            var: var.clone(),
        };
        let back: BackwardFn = Box::new(move |g, need| {
            let (dx, dgamma, dbeta) =
                kernels::bn_backward_train(xt.data(), shape, &mean, &inv_std, gt.data(), g);
            let mut out = Vec::new();
            if need[0] {
                out.push((0, dx));
            }
            if need[1] {
                out.push((1, dgamma));
            }
            if need[2] {
                out.push((2, dbeta));
            }
            out
        });
        let v = self.push(
            Tensor::from_vec(shape, out)?,
            vec![x.0, gamma.0, beta.0],
            Some(back),
            None,
        );
        Ok((v, stats))
    }

    /// Eval-mode batch norm with fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor,
        running_var: &Tensor,
        eps: f64,
    ) -> Result<Var> {
        let xt = self.value(x).clone();
        let gt = self.value(gamma).clone();
        let bt = self.value(beta).clone();
        let shape = xt.shape();
        if running_var.data().iter().any(|&v| v < 0.0) {
            return Err(Error::contract(
                "batchnorm running variance must be non-negative".to_string(),
            ));
        }
        let mean: Vec<f64> = running_mean.data().iter().map(|&v| v as f64).collect();
        let inv_std: Vec<f64> = running_var
            .data()
            .iter()
            .map(|&v| 1.0 / (v as f64 + eps).sqrt())
            .collect();
        let out = kernels::bn_apply(xt.data(), shape, &mean, &inv_std, gt.data(), bt.data());
        let back: BackwardFn = Box::new(move |g, need| {
            let (dx, dgamma, dbeta) =
                kernels::bn_backward_eval(xt.data(), shape, &mean, &inv_std, gt.data(), g);
            let mut out = Vec::new();
            if need[0] {
                out.push((0, dx));
            }
            if need[1] {
                out.push((1, dgamma));
            }
            if need[2] {
                out.push((2, dbeta));
            }
            out
        });
        Ok(self.push(
            Tensor::from_vec(shape, out)?,
            vec![x.0, gamma.0, beta.0],
            Some(back),
            None,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xt = self.value(x).clone();
        let out = kernels::relu_forward(xt.data());
        let shape = xt.shape();
        let back: BackwardFn = Box::new(move |g, need| {
            if !need[0] {
                return Vec::new();
            }
            vec![(0, kernels::relu_backward(xt.data(), g))]
        });
        self.push(
            Tensor::from_vec(shape, out).expect("relu preserves shape"),
            vec![x.0],
            Some(back),
            None,
        )
    }

    pub fn gap(&mut self, x: Var) -> Var {
        let xt = self.value(x).clone();
        let (out, oshape) = kernels::gap_forward(xt.data(), xt.shape());
        let ishape = xt.shape();
        let back: BackwardFn = Box::new(move |g, need| {
            if !need[0] {
                return Vec::new();
            }
            vec![(0, kernels::gap_backward(g, ishape))]
        });
        self.push(
            Tensor::from_vec(oshape, out).expect("gap shape"),
            vec![x.0],
            Some(back),
            None,
        )
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xt = self.value(x).clone();
        let wt = self.value(weight).clone();
        let bt = bias.map(|b| self.value(b).clone());
        let (out, oshape) = kernels::linear_forward(
            xt.data(),
            xt.shape(),
            wt.data(),
            wt.shape(),
            bt.as_ref().map(|b| b.data()),
        )?;
        let mut parents = vec![x.0, weight.0];
        if let Some(b) = bias {
            parents.push(b.0);
        }
        let (ishape, wshape) = (xt.shape(), wt.shape());
        let has_bias = bias.is_some();
        let back: BackwardFn = Box::new(move |g, need| {
            let (dx, dw, db) =
                kernels::linear_backward(xt.data(), ishape, wt.data(), wshape, g);
            let mut out = Vec::new();
            if need[0] {
                out.push((0, dx));
            }
            if need[1] {
                out.push((1, dw));
            }
            if has_bias && need[2] {
                out.push((2, db));
            }
            out
        });
        Ok(self.push(Tensor::from_vec(oshape, out)?, parents, Some(back), None))
    }

    pub fn softmax_channel(&mut self, x: Var) -> Var {
        let xt = self.value(x).clone();
        let shape = xt.shape();
        let out = kernels::softmax_channel_forward(xt.data(), shape);
        let out_t = Tensor::from_vec(shape, out).expect("softmax shape");
        let yt = out_t.clone();
        let back: BackwardFn = Box::new(move |g, need| {
            if !need[0] {
                return Vec::new();
            }
            vec![(0, kernels::softmax_channel_backward(yt.data(), shape, g))]
        });
        self.push(out_t, vec![x.0], Some(back), None)
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let xt = self.value(x).clone();
        let ishape = xt.shape();
        let (out, oshape) = kernels::upsample_nearest2_forward(xt.data(), ishape);
        let back: BackwardFn = Box::new(move |g, need| {
            if !need[0] {
                return Vec::new();
            }
            vec![(0, kernels::upsample_nearest2_backward(g, oshape, ishape))]
        });
        self.push(
            Tensor::from_vec(oshape, out).expect("upsample shape"),
            vec![x.0],
            Some(back),
            None,
        )
    }

    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let xt = self.value(x).clone();
        let ishape = xt.shape();
        let (out, oshape) = kernels::resize_bilinear_forward(xt.data(), ishape, oh, ow)?;
        let back: BackwardFn = Box::new(move |g, need| {
            if !need[0] {
                return Vec::new();
            }
            vec![(0, kernels::resize_bilinear_backward(g, oshape, ishape))]
        });
        Ok(self.push(Tensor::from_vec(oshape, out)?, vec![x.0], Some(back), None))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let at = self.value(a).clone();
        let bt = self.value(b).clone();
        let (ashape, bshape) = (at.shape(), bt.shape());
        let (out, oshape) =
            kernels::concat_channels_forward(at.data(), ashape, bt.data(), bshape)?;
        let back: BackwardFn = Box::new(move |g, need| {
            let (da, db) = kernels::concat_channels_backward(g, oshape, ashape, bshape);
            let mut out = Vec::new();
            if need[0] {
                out.push((0, da));
            }
            if need[1] {
                out.push((1, db));
            }
            out
        });
        Ok(self.push(Tensor::from_vec(oshape, out)?, vec![a.0, b.0], Some(back), None))
    }

    pub fn center_crop(&mut self, x: Var, th: usize, tw: usize) -> Result<Var> {
        let xt = self.value(x).clone();
        let ishape = xt.shape();
        let (out, oshape) = kernels::center_crop_forward(xt.data(), ishape, th, tw)?;
        let back: BackwardFn = Box::new(move |g, need| {
            if !need[0] {
                return Vec::new();
            }
            vec![(0, kernels::center_crop_backward(g, oshape, ishape))]
        });
        Ok(self.push(Tensor::from_vec(oshape, out)?, vec![x.0], Some(back), None))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let at = self.value(a).clone();
        let bt = self.value(b).clone();
        if at.shape() != bt.shape() {
            return Err(Error::shape(format!(
                "add requires equal shapes: {} vs {}",
                at.shape(),
                bt.shape()
            )));
        }
        let out: Vec<f32> = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| ((x as f64) + (y as f64)) as f32)
            .collect();
        let back: BackwardFn = Box::new(move |g, need| {
            let mut out = Vec::new();
            if need[0] {
                out.push((0, g.to_vec()));
            }
            if need[1] {
                out.push((1, g.to_vec()));
            }
            out
        });
        let exact = match (self.nodes[a.0].exact_scalar, self.nodes[b.0].exact_scalar) {
            (Some(x), Some(y)) if at.is_scalar() => Some(x + y),
            _ => None,
        };
        let var = self.push(
            Tensor::from_vec(at.shape(), out)?,
            vec![a.0, b.0],
            Some(back),
            None,
        );
        self.nodes[var.0].exact_scalar = exact;
        Ok(var)
    }

    /// Scalar projection `sum_i weights[i] * x[i]` (f64 accumulation).
    pub fn weighted_sum(&mut self, x: Var, weights: &[f32]) -> Result<Var> {
        let xt = self.value(x).clone();
        if weights.len() != xt.shape().count() {
            return Err(Error::shape(format!(
                "projection length {} does not match tensor {}",
                weights.len(),
                xt.shape()
            )));
        }
        let acc: f64 = xt
            .data()
            .iter()
            .zip(weights)
            .map(|(&v, &w)| v as f64 * w as f64)
            .sum();
        let weights = weights.to_vec();
        let back: BackwardFn = Box::new(move |g, need| {
            if !need[0] {
                return Vec::new();
            }
            let up = g[0] as f64;
            vec![(0, weights.iter().map(|&w| (w as f64 * up) as f32).collect())]
        });
        let var = self.push(Tensor::scalar(acc as f32), vec![x.0], Some(back), None);
        self.nodes[var.0].exact_scalar = Some(acc);
        Ok(var)
    }

    /// Appends a custom node. Used by the loss functions, which compute
    /// their own forward value and input gradient.
    pub(crate) fn custom(
        &mut self,
        value: Tensor,
        exact_scalar: Option<f64>,
        parents: Vec<Var>,
        backward: BackwardFn,
    ) -> Var {
        let parents = parents.into_iter().map(|v| v.0).collect();
        let var = self.push(value, parents, Some(backward), None);
        self.nodes[var.0].exact_scalar = exact_scalar;
        var
    }

    /// The f64 value of a scalar node, before f32 rounding when the node
    /// recorded one (scalar reductions and losses do).
    pub fn scalar_f64(&self, v: Var) -> Result<f64> {
        let node = &self.nodes[v.0];
        match node.exact_scalar {
            Some(e) => Ok(e),
            None => Ok(node.value.scalar_value()? as f64),
        }
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.backward {
                Some(back) => {
                    let need: Vec<bool> = node
                        .parents
                        .iter()
                        .map(|&p| self.nodes[p].requires_grad)
                        .collect();
                    for (slot, contribution) in back(&g, &need) {
                        let pid = node.parents[slot];
                        match &mut grads[pid] {
                            Some(existing) => {
                                for (e, c) in existing.iter_mut().zip(contribution) {
                                    *e += c;
                                }
                            }
                            entry @ None => *entry = Some(contribution),
                        }
                    }
                }
                // Leaves (inputs and parameters) keep their gradients;
                // interior gradients are dropped once consumed.
                None => grads[id] = Some(g),
            }
        }
        Ok(Gradients { grads })
    }

    /// Parameter leaves present on this tape, in creation order.
    pub fn param_leaves(&self) -> Vec<(Var, ParamId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (Var(i), p)))
            .collect()
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads[v.0].as_deref()
    }

    /// Adds every parameter-leaf gradient into the store's grad buffers.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (var, id) in tape.param_leaves() {
            if let Some(g) = self.grad(var) {
                store.add_grad(id, g);
            }
        }
    }
}

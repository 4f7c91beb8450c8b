//! Adam with decoupled weight decay, and the polynomial learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled L2 weight decay, applied only to parameters flagged as
    /// decay-eligible (conv/linear weights; never biases or batch norm).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Optimizer state: step count plus first/second moment buffers mirroring
/// every trainable parameter.
pub struct AdamState {
    pub step: u64,
    cfg: AdamConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let m = store
            .iter()
            .map(|(_, e)| vec![0f32; if e.trainable { e.value.shape().count() } else { 0 }])
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { step: 0, cfg, m, v }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// One optimizer step over the accumulated gradients in `store`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        for (idx, (_, entry)) in store.iter_mut().enumerate() {
            if !entry.trainable {
                continue;
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let shape = entry.value.shape();
            let mut data = entry.value.data().to_vec();
            for j in 0..data.len() {
                let g = entry.grad[j] as f64;
                let mj = self.cfg.beta1 * m[j] as f64 + (1.0 - self.cfg.beta1) * g;
                let vj = self.cfg.beta2 * v[j] as f64 + (1.0 - self.cfg.beta2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let mhat = mj / bc1;
                let vhat = vj / bc2;
                let mut w = data[j] as f64;
                w -= lr * (mhat / (vhat.sqrt() + self.cfg.epsilon));
                if entry.decay {
                    w -= lr * self.cfg.weight_decay * data[j] as f64;
                }
                data[j] = w as f32;
            }
            entry.value = Tensor::from_vec(shape, data).expect("adam preserves shape");
        }
    }
}

/// Polynomial learning-rate decay state.
#[derive(Debug, Clone, Copy)]
pub struct Scheduler {
    pub l_init: f64,
    pub gamma: f64,
    pub max_itr: u64,
    pub itr: u64,
}

impl Scheduler {
    pub fn new(l_init: f64, gamma: f64, max_itr: u64) -> Result<Self> {
        if l_init <= 0.0 || gamma <= 0.0 || max_itr == 0 {
            return Err(Error::config(format!(
                "scheduler requires l_init > 0, gamma > 0, max_itr > 0 (got {l_init}, {gamma}, {max_itr})"
            )));
        }
        Ok(Scheduler {
            l_init,
            gamma,
            max_itr,
            itr: 0,
        })
    }

    pub fn advance(&mut self) {
        self.itr = (self.itr + 1).min(self.max_itr);
    }
}

/// `l_init * (1 - itr / max_itr)^gamma`.
pub fn poly_lr(sched: &Scheduler) -> Result<f64> {
    if sched.itr > sched.max_itr {
        return Err(Error::contract(format!(
            "scheduler iteration {} past max {}",
            sched.itr, sched.max_itr
        )));
    }
    let frac = 1.0 - sched.itr as f64 / sched.max_itr as f64;
    Ok(sched.l_init * frac.powf(sched.gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn poly_lr_endpoints_and_midpoint() {
        let mut s = Scheduler::new(1e-3, 0.9, 100).unwrap();
        assert_eq!(poly_lr(&s).unwrap(), 1e-3);
        s.itr = 50;
        let mid = poly_lr(&s).unwrap();
        assert!((mid - 1e-3 * 0.5f64.powf(0.9)).abs() < 1e-12);
        assert!((mid - 5.359e-4).abs() < 1e-6);
        s.itr = 100;
        assert_eq!(poly_lr(&s).unwrap(), 0.0);
        s.itr = 101;
        assert!(matches!(poly_lr(&s), Err(Error::Contract(_))));
    }

    #[test]
    fn poly_lr_is_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for itr in 0..=40 {
            let s = Scheduler {
                l_init: 0.02,
                gamma: 0.9,
                max_itr: 40,
                itr,
            };
            let lr = poly_lr(&s).unwrap();
            assert!(lr < prev, "itr {itr}");
            prev = lr;
        }
    }

    /// First step on f(w) = w^2 from w = 1: the bias-corrected update has
    /// unit norm, so w moves toward zero by exactly lr.
    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0), true, false);
        let mut adam = AdamState::new(
            &store,
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        store.add_grad(id, &[2.0]); // d(w^2)/dw at w = 1
        adam.step(&mut store, 0.1);
        let w = store.value(id).data()[0] as f64;
        assert!((w - 0.9).abs() < 1e-6, "got {w}");
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn weight_decay_touches_only_decay_flagged_params() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0), true, true);
        let g = store.add("g", Tensor::scalar(1.0), true, false);
        let frozen = store.add("rm", Tensor::scalar(1.0), false, false);
        let mut adam = AdamState::new(
            &store,
            AdamConfig {
                weight_decay: 0.5,
                ..AdamConfig::default()
            },
        );
        // Zero gradients: the adaptive update is 0/ (0 + eps) = 0, so only
        // the decay term can move anything.
        adam.step(&mut store, 0.1);
        assert!((store.value(w).data()[0] - 0.95).abs() < 1e-6);
        assert_eq!(store.value(g).data()[0], 1.0);
        assert_eq!(store.value(frozen).data()[0], 1.0);
    }

    #[test]
    fn moment_buffers_mirror_trainable_shapes() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(Shape::new(2, 3, 1, 1)), true, true);
        store.add("b", Tensor::zeros(Shape::new(1, 4, 1, 1)), false, false);
        let adam = AdamState::new(&store, AdamConfig::default());
        assert_eq!(adam.m[0].len(), 6);
        assert_eq!(adam.m[1].len(), 0);
    }
}

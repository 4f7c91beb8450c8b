use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f32>,
    /// Optimized by the training loop. Batch-norm running statistics are
    /// stored here too but with `trainable = false`.
    pub trainable: bool,
    /// Eligible for decoupled weight decay (conv/linear weights only).
    pub decay: bool,
}

/// Ordered, named collection of model parameters. The insertion order is
/// the serialization order, so checkpoints are byte-deterministic.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool, decay: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let grad = vec![0.0; value.shape().count()];
        self.entries.push(ParamEntry {
            name,
            value,
            grad,
            trainable,
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            value.shape(),
            self.entries[id.0].value.shape(),
            "parameter {} shape change",
            self.entries[id.0].name
        );
        self.entries[id.0].value = value;
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn add_grad(&mut self, id: ParamId, grad: &[f32]) {
        let dst = &mut self.entries[id.0].grad;
        assert_eq!(dst.len(), grad.len());
        for (d, &g) in dst.iter_mut().zip(grad) {
            *d += g;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut ParamEntry)> {
        self.entries
            .iter_mut()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.shape().count())
            .sum()
    }

    /// Replaces values from `(name, tensor)` pairs; every store entry must
    /// be present with a matching shape, extras are an error.
    pub fn load_named(&mut self, blobs: Vec<(String, Tensor)>) -> Result<()> {
        if blobs.len() != self.entries.len() {
            return Err(Error::data(format!(
                "checkpoint has {} parameters, model expects {}",
                blobs.len(),
                self.entries.len()
            )));
        }
        for (name, tensor) in blobs {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::data(format!("checkpoint parameter {name} is not part of this model")))?;
            if tensor.shape() != self.entries[id.0].value.shape() {
                return Err(Error::data(format!(
                    "checkpoint parameter {name} has shape {}, model expects {}",
                    tensor.shape(),
                    self.entries[id.0].value.shape()
                )));
            }
            self.entries[id.0].value = tensor;
        }
        Ok(())
    }
}

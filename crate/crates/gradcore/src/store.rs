//! Central registry of named model parameters and non-trainable buffers.

use crate::error::GradError;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::Result;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<F: Real> {
    pub name: String,
    pub tensor: Tensor<F>,
    /// False for buffers (running statistics, frozen weights): they are
    /// checkpointed but never bound with gradients or touched by Adam.
    pub trainable: bool,
}

/// Insertion-ordered parameter store; iteration order is deterministic,
/// which keeps checkpoints and optimizer traversal bit-reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F: Real> {
    entries: Vec<ParamEntry<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        mut tensor: Tensor<F>,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(GradError::DuplicateParam(name));
        }
        tensor.requires_grad = trainable;
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry<F> {
        &mut self.entries[id.0]
    }

    pub fn id_of(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<F>> {
        self.entries.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.grad = None;
        }
    }

    /// Overwrites entry values from `(name, tensor)` pairs. Every pair must
    /// match a registered entry in name and shape, and every registered
    /// entry selected by `filter` must be covered — a strict handshake that
    /// catches configuration mismatches at load time.
    pub fn load_values<'a>(
        &mut self,
        values: impl IntoIterator<Item = (&'a str, &'a Tensor<F>)>,
        filter: impl Fn(&str) -> bool,
    ) -> Result<()> {
        let mut seen = vec![false; self.entries.len()];
        for (name, tensor) in values {
            let id = self.id_of(name)?;
            let entry = &mut self.entries[id.0];
            if entry.tensor.shape != tensor.shape {
                return Err(GradError::ShapeMismatch {
                    op: "load_values",
                    lhs: entry.tensor.shape.clone(),
                    rhs: tensor.shape.clone(),
                });
            }
            entry.tensor.data = tensor.data.clone();
            seen[id.0] = true;
        }
        for (i, e) in self.entries.iter().enumerate() {
            if filter(&e.name) && !seen[i] {
                return Err(GradError::Checkpoint(format!(
                    "missing tensor `{}` in loaded values",
                    e.name
                )));
            }
        }
        Ok(())
    }

    /// Flips trainability for every entry whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.trainable = trainable;
                e.tensor.requires_grad = trainable;
            }
        }
    }

    /// Total number of scalar elements across trainable parameters.
    pub fn trainable_numel(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }
}

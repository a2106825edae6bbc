use std::collections::HashMap;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Named trainable tensors in insertion order. The unit of optimizer
/// updates and checkpointing.
#[derive(Default, Clone)]
pub struct ParamRegistry {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl std::fmt::Debug for ParamRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.entries.iter().map(|(n, t)| (n, t.shape())))
            .finish()
    }
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter. The stored tensor always requires gradients; a
    /// constant passed in is copied into a fresh trainable leaf.
    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<Tensor> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let tensor = if tensor.requires_grad() && tensor.op_name().is_none() {
            tensor
        } else {
            tensor.with_requires_grad(true)
        };
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor.clone()));
        Ok(tensor)
    }

    /// Registers a tensor drawn from U(-bound, bound).
    pub fn uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<Tensor> {
        self.register(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Tensor> {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.entries.iter().for_each(|(_, t)| t.zero_grad());
    }

    /// A registry with the same names and shapes whose tensors are fresh
    /// copies; training one does not affect the other.
    pub fn deep_copy(&self) -> Self {
        let entries: Vec<_> = self
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), t.with_requires_grad(true)))
            .collect();
        ParamRegistry {
            entries,
            index: self.index.clone(),
        }
    }

    /// Same names and values as constants, for inference without building
    /// backward closures. Not meant to be stepped by an optimizer.
    pub fn frozen_copy(&self) -> Self {
        let entries: Vec<_> = self
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), t.with_requires_grad(false)))
            .collect();
        ParamRegistry {
            entries,
            index: self.index.clone(),
        }
    }

    /// Copies values from `other` for every name both registries share.
    pub fn copy_from(&self, other: &ParamRegistry) -> Result<()> {
        for (name, t) in &self.entries {
            if let Ok(src) = other.get(name) {
                if src.shape() != t.shape() {
                    return Err(TensorError::shapes("copy_from", t.shape(), src.shape()));
                }
                t.data_mut().copy_from_slice(&src.data());
            }
        }
        Ok(())
    }

    /// Flat copy of all values in registry order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, t)| t.to_vec()).collect()
    }
}

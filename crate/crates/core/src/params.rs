//! Named trainable parameters and their per-graph bindings.
//!
//! A [`ParamStore`] owns the model weights between episodes, keyed by
//! dotted names (`embedder.edgeconv0.weight`, `spa.fc1.bias`, ...). Each
//! training step registers every parameter as a gradient-requiring leaf
//! in a fresh graph via [`ParamStore::bind`], and writes updates back
//! through [`ParamStore::get_mut`]. Iteration order is the sorted name
//! order everywhere, which keeps initialization and optimizer traversal
//! deterministic.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

// Used by the no_std build; the test harness links `std`, whose inherent
// float methods shadow the trait.
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;
use rand::Rng as _;

use crate::autograd::{Graph, Tensor, TensorId};
use crate::error::{Error, Result};
use crate::rng;

/// Ordered collection of named weight tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.tensors.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(String::from(name), tensor.with_grad());
        Ok(())
    }

    /// Creates a `rows x cols` tensor with uniform entries in `[-a, a]`,
    /// `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_xavier(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut rng::Rng,
    ) -> Result<()> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, Tensor::zeros(rows, cols))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    /// Sorted (name, tensor) pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Result<ParamBinding> {
        let mut ids = BTreeMap::new();
        for (name, tensor) in &self.tensors {
            ids.insert(name.clone(), g.leaf(tensor)?);
        }
        Ok(ParamBinding { ids })
    }
}

/// Leaf ids of a [`ParamStore`] inside one particular graph.
pub struct ParamBinding {
    ids: BTreeMap<String, TensorId>,
}

impl ParamBinding {
    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TensorId)> {
        self.ids.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

//! Named parameter registry shared by every network in the workspace.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::io::{Container, ContainerError, TensorPayload};
use crate::rng::fnv1a64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("parameter {0:?} registered twice")]
    Duplicate(String),

    #[error("parameter {0:?} not found")]
    Missing(String),

    #[error("parameter {name:?}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint has unused entry {0:?}")]
    Unused(String),

    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Ordered name → tensor map. Iteration order is the sorted name order, so
/// optimizers and checkpoints see a deterministic parameter sequence.
pub struct ParamSet<E: Scalar> {
    map: BTreeMap<String, Tensor<E>>,
}

impl<E: Scalar> Default for ParamSet<E> {
    fn default() -> Self {
        ParamSet { map: BTreeMap::new() }
    }
}

impl<E: Scalar> ParamSet<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor<E>) -> Result<(), ParamError> {
        if self.map.contains_key(name) {
            return Err(ParamError::Duplicate(name.to_string()));
        }
        self.map.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Tensor<E>, ParamError> {
        self.map
            .get(name)
            .cloned()
            .ok_or_else(|| ParamError::Missing(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    /// All tensors in sorted name order.
    pub fn tensors(&self) -> Vec<Tensor<E>> {
        self.map.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for t in self.map.values() {
            t.zero_grad();
        }
    }

    /// Copy with every tensor detached from the autodiff graph; inference on
    /// the result records no tape.
    pub fn detached(&self) -> ParamSet<E> {
        let mut out = ParamSet::new();
        for (name, t) in &self.map {
            out.map.insert(name.clone(), t.detach());
        }
        out
    }
}

impl ParamSet<f32> {
    /// Add every parameter to `c` as `"{prefix}{name}"`.
    pub fn store(&self, c: &mut Container, prefix: &str) -> Result<(), ParamError> {
        for (name, t) in &self.map {
            c.insert_f32(&format!("{prefix}{name}"), t.shape(), t.to_vec())?;
        }
        Ok(())
    }

    /// Rebuild from every container entry under `prefix`. With
    /// `trainable = false` the tensors are plain constants, which freezes
    /// them structurally: no gradient is ever recorded for them.
    pub fn load(c: &Container, prefix: &str, trainable: bool) -> Result<Self, ParamError> {
        let mut out = ParamSet::new();
        for (name, payload) in c.iter() {
            let Some(short) = name.strip_prefix(prefix) else {
                continue;
            };
            let TensorPayload::F32 { shape, data } = payload else {
                return Err(ParamError::Container(ContainerError::WrongKind {
                    name: name.to_string(),
                    expected: "f32",
                    found: "u8",
                }));
            };
            let t = if trainable {
                Tensor::param(shape, data.clone())
            } else {
                Tensor::from_vec(shape, data.clone())
            }
            .map_err(|_| ParamError::Shape {
                name: short.to_string(),
                expected: shape.clone(),
                found: vec![data.len()],
            })?;
            out.insert(short, t)?;
        }
        Ok(out)
    }

    /// Order-independent content hash over names, shapes, and exact bits.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for (name, t) in &self.map {
            bytes.extend_from_slice(name.as_bytes());
            for &d in t.shape() {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data().iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }
}

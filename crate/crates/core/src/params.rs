//! Named trainable tensors with paired gradient accumulators and RMSProp state.

use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Half-width of the uniform initialization range.
pub const INIT_SCALE: f64 = 0.08;

/// Stable handle to a parameter inside one [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
    rms: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        value.ensure_finite(name)?;
        let id = ParamId(self.entries.len());
        let shape = value.shape().to_vec();
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(&shape),
            rms: Tensor::zeros(&shape),
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Registers a parameter drawn uniformly from `[-INIT_SCALE, INIT_SCALE]`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        rng: &mut R,
    ) -> Result<ParamId> {
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        self.insert(name, Tensor::from_vec(shape, data)?)
    }

    pub(crate) fn insert_with_state(
        &mut self,
        name: &str,
        value: Tensor,
        rms: Tensor,
    ) -> Result<ParamId> {
        if rms.shape() != value.shape() {
            return Err(Error::Checkpoint(format!("rms shape mismatch for {name}")));
        }
        let id = self.insert(name, value)?;
        self.entries[id.0].rms = rms;
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Parameter names in registration order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn rms(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].rms
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Replaces a parameter value; the new value must keep its shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if value.shape() != entry.value.shape() {
            return Err(Error::shape(format!(
                "{}: expected {:?}, got {:?}",
                entry.name,
                entry.value.shape(),
                value.shape()
            )));
        }
        value.ensure_finite(&entry.name)?;
        entry.value = value;
        Ok(())
    }

    /// Sets one flat coordinate of a parameter. Used by gradient checking.
    pub fn set_coordinate(&mut self, id: ParamId, flat: usize, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::NonFinite(self.entries[id.0].name.clone()));
        }
        self.entries[id.0].value.data_mut()[flat] = v;
        Ok(())
    }

    pub fn coordinate(&self, id: ParamId, flat: usize) -> f64 {
        self.entries[id.0].value.data()[flat]
    }

    /// A zeroed gradient buffer aligned with this store.
    pub fn new_gradients(&self) -> Gradients {
        Gradients {
            bufs: self
                .entries
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect(),
        }
    }

    /// Adds a gradient buffer into the store's accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        if grads.bufs.len() != self.entries.len() {
            return Err(Error::shape("gradient buffer does not match store"));
        }
        for (entry, g) in self.entries.iter_mut().zip(&grads.bufs) {
            for (a, &b) in entry.grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.grad.sum_sq())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g *= factor;
            }
        }
    }

    /// Applies `f(value, grad, rms)` to every entry. The optimizer lives
    /// elsewhere; this is its only write path into the store.
    pub(crate) fn for_each_entry_mut<F>(&mut self, mut f: F) -> Result<()>
    where
        F: FnMut(&str, &mut [f64], &mut [f64], &mut [f64]) -> Result<()>,
    {
        for e in &mut self.entries {
            let Entry {
                name,
                value,
                grad,
                rms,
            } = e;
            f(name, value.data_mut(), grad.data_mut(), rms.data_mut())?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and values of every parameter whose name
    /// starts with `prefix` (empty prefix covers all).
    pub fn checksum(&self, prefix: &str) -> String {
        let mut hasher = Sha256::new();
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            hasher.update(e.name.as_bytes());
            for &d in e.value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in e.value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Gradient accumulators aligned index-for-index with a [`ParameterStore`].
/// Kept separate from the store so backward passes can read parameter
/// values while writing gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    bufs: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.bufs[id.0]
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.bufs[id.0].data_mut()
    }

    pub fn row_mut(&mut self, id: ParamId, row: usize) -> &mut [f64] {
        self.bufs[id.0].row_mut(row)
    }

    pub fn norm(&self) -> f64 {
        self.bufs.iter().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.bufs.iter().all(|t| t.data().iter().all(|&v| v == 0.0))
    }

    pub fn ensure_finite(&self, store: &ParameterStore) -> Result<()> {
        for (i, b) in self.bufs.iter().enumerate() {
            b.ensure_finite(&format!("gradient of {}", store.name(ParamId(i))))?;
        }
        Ok(())
    }
}

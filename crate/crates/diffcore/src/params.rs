//! Named parameters, their gradients, and the Adam update.

use std::collections::HashMap;

use crate::array::NdArray;
use crate::error::{shape_err, DiffError, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameters with Adam moment accumulators.
///
/// Insertion order is stable and defines the order of gradients,
/// checkpoint entries and gradcheck traversal.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<NdArray>,
    first_moment: Vec<NdArray>,
    second_moment: Vec<NdArray>,
    step: u64,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: NdArray) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(DiffError::DuplicateParam(name));
        }
        let id = self.names.len();
        self.first_moment.push(NdArray::zeros(value.shape()));
        self.second_moment.push(NdArray::zeros(value.shape()));
        self.values.push(value);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &NdArray {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut NdArray {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&NdArray> {
        Ok(self.get(self.id(name)?))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NdArray)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(NdArray::len).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> (&NdArray, &NdArray) {
        (&self.first_moment[id.0], &self.second_moment[id.0])
    }

    /// Restores optimizer state, e.g. from a checkpoint.
    pub fn set_optimizer_state(
        &mut self,
        id: ParamId,
        first: NdArray,
        second: NdArray,
    ) -> Result<()> {
        let shape = self.values[id.0].shape();
        if first.shape() != shape {
            return shape_err("set_optimizer_state", shape, first.shape());
        }
        if second.shape() != shape {
            return shape_err("set_optimizer_state", shape, second.shape());
        }
        self.first_moment[id.0] = first;
        self.second_moment[id.0] = second;
        Ok(())
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// One bias-corrected Adam update. Increments the step counter.
    pub fn adam_step(&mut self, grads: &Gradients, adam: &Adam) -> Result<()> {
        if grads.grads.len() != self.values.len() {
            return Err(DiffError::Invalid {
                op: "adam_step",
                msg: format!(
                    "{} gradients for {} parameters",
                    grads.grads.len(),
                    self.values.len()
                ),
            });
        }
        for (i, g) in grads.grads.iter().enumerate() {
            if g.shape() != self.values[i].shape() {
                return shape_err("adam_step", self.values[i].shape(), g.shape());
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - adam.beta1.powi(t);
        let bias2 = 1.0 - adam.beta2.powi(t);
        for (i, g) in grads.grads.iter().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = self.values[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = adam.beta1 * m[j] + (1.0 - adam.beta1) * gj;
                v[j] = adam.beta2 * v[j] + (1.0 - adam.beta2) * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] -= adam.lr * m_hat / (v_hat.sqrt() + adam.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradients aligned with the parameter order of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) grads: Vec<NdArray>,
}

impl Gradients {
    pub fn zeros(store: &ParamStore) -> Self {
        Self {
            grads: store.values.iter().map(|v| NdArray::zeros(v.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &NdArray {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut NdArray {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &NdArray)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.grads.iter().fold(0.0, |m, g| m.max(g.max_abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(NdArray::all_finite)
    }
}

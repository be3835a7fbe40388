use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Array2<f64>,
    grad: Array2<f64>,
}

/// Named parameter matrices with gradient accumulators of identical shape.
///
/// Parameters keep their insertion order, which is also the order used by
/// checkpoints and by the optimizer. The version counter is bumped once per
/// optimizer step.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    version: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let grad = Array2::zeros(value.raw_dim());
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index.get(name).map(|&i| ParamId(i)).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].grad
    }

    /// Simultaneous access to a parameter and its gradient.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Array2<f64>, &Array2<f64>) {
        let p = &mut self.params[id.0];
        (&mut p.value, &p.grad)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// All parameter values flattened in store order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    /// All gradients flattened in store order.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_scalars() {
            return Err(Error::shape("ParamStore::set_flat_values", self.num_scalars(), values.len()));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.len();
            for (dst, &src) in p.value.iter_mut().zip(&values[offset..offset + n]) {
                *dst = src;
            }
            offset += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_match_shapes_and_zero() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Array2::ones((3, 2))).unwrap();
        assert_eq!(store.grad(w).dim(), (3, 2));
        store.grad_mut(w).fill(1.5);
        store.zero_grads();
        assert!(store.grad(w).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.insert("a", Array2::zeros((1, 1))).unwrap();
        assert!(store.insert("a", Array2::zeros((1, 1))).is_err());
        assert!(matches!(store.id("b"), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn flat_round_trip() {
        let mut store = ParamStore::new();
        store.insert("a", Array2::zeros((2, 2))).unwrap();
        store.insert("b", Array2::zeros((1, 3))).unwrap();
        let v: Vec<f64> = (0..7).map(|i| i as f64).collect();
        store.set_flat_values(&v).unwrap();
        assert_eq!(store.flat_values(), v);
    }
}

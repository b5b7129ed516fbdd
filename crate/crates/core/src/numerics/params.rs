use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`]. Stable until the next insert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, kept sorted by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(map: BTreeMap<String, Tensor>) -> Self {
        let mut store = Self::new();
        for (name, mut t) in map {
            t.set_requires_grad(true);
            store.names.push(name);
            store.tensors.push(t);
        }
        store
    }

    /// Inserts a new parameter. Previously issued [`ParamId`]s may shift.
    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor) -> Result<()> {
        let name = name.into();
        match self.names.binary_search(&name) {
            Ok(_) => Err(Error::config(format!("duplicate parameter name {name:?}"))),
            Err(pos) => {
                tensor.set_requires_grad(true);
                self.names.insert(pos, name);
                self.tensors.insert(pos, tensor);
                Ok(())
            }
        }
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok().map(ParamId)
    }

    pub fn expect_id(&self, name: &str) -> Result<ParamId> {
        self.id(name).ok_or_else(|| Error::config(format!("unknown parameter {name:?}")))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.len()).map(ParamId)
    }

    /// `(id, name, tensor)` in name order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Copies every value from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::config("parameter layouts differ"));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::dim("parameter shapes differ"));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Values only, without gradient buffers.
    pub fn snapshot(&self) -> ParamStore {
        let mut s = self.clone();
        s.clear_grads();
        s
    }

    /// Euclidean norm over all gradient buffers.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(Tensor::grad)
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_unique_and_counted() {
        let mut s = ParamStore::new();
        s.insert("b.weight", Tensor::zeros(&[2, 3])).unwrap();
        s.insert("a.bias", Tensor::zeros(&[3])).unwrap();
        s.insert("c", Tensor::zeros(&[4, 1, 2])).unwrap();
        assert!(s.insert("a.bias", Tensor::zeros(&[1])).is_err());
        let names: Vec<_> = s.iter().map(|(_, n, _)| n.to_string()).collect();
        assert_eq!(names, ["a.bias", "b.weight", "c"]);
        assert_eq!(s.total_count(), 6 + 3 + 8);
        assert!(s.iter().all(|(_, _, t)| t.requires_grad()));
        assert_eq!(s.name(s.id("c").unwrap()), "c");
        assert!(s.id("zzz").is_none());
    }
}

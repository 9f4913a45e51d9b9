use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
    /// Multiplier on the optimizer learning rate.
    pub lr_scale: f64,
}

/// Named learnable tensors, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, tensor, trainable: true, lr_scale: 1.0 });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Allocates a zeroed gradient buffer on every parameter.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            let g = p.tensor.grad_mut();
            g.fill(0.0);
        }
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn set_lr_scale(&mut self, prefix: &str, scale: f64) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.lr_scale = scale;
            }
        }
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replaces values by name; every stored parameter must be present with the same shape.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .id(&p.name)
                .map(|id| other.tensor(id))
                .ok_or_else(|| Error::Input(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if src.shape() != p.tensor.shape() {
                return Err(Error::dim("load_values", p.tensor.shape(), src.shape()));
            }
            p.tensor.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2]).unwrap()).unwrap();
        assert!(matches!(s.add("w", Tensor::zeros(&[2]).unwrap()), Err(Error::Config(_))));
        assert_eq!(s.id("w"), Some(ParamId(0)));
    }

    #[test]
    fn trainable_prefix() {
        let mut s = ParamStore::new();
        s.add("iafa.a.w", Tensor::zeros(&[1]).unwrap()).unwrap();
        s.add("head.w", Tensor::zeros(&[1]).unwrap()).unwrap();
        s.set_trainable("iafa.", false);
        let flags: Vec<bool> = s.iter().map(|(_, p)| p.trainable).collect();
        assert_eq!(flags, vec![false, true]);
    }
}

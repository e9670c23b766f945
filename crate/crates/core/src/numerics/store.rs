use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// RMSProp running mean of squared gradients.
    pub cache: Tensor<T>,
}

/// Named parameters with gradient accumulators and optimizer state.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterStore<T = f32> {
    params: Vec<Parameter<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(Error::Config(alloc::format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        let cache = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.to_string(), value, grad, cache });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    cache: p.cache.cast(),
                })
                .collect(),
        }
    }

    /// Adds `other`'s gradients into this store. Both must have identical layouts.
    pub fn accumulate_grads(&mut self, other: &ParameterStore<T>) {
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            for (a, &b) in p.grad.data_mut().iter_mut().zip(q.grad.data()) {
                *a = *a + b;
            }
        }
    }
}

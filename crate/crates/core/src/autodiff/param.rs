use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
    /// Columns of a rank-2 value whose gradient is always masked to zero.
    pub frozen_columns: Vec<usize>,
}

impl<T: Scalar> Parameter<T> {
    /// Whether flat element `i` may be updated.
    pub fn is_free(&self, i: usize) -> bool {
        if !self.trainable {
            return false;
        }
        if self.frozen_columns.is_empty() {
            return true;
        }
        let cols = self.value.dim(self.value.rank() - 1);
        !self.frozen_columns.contains(&(i % cols))
    }

    fn mask_grad(&mut self) {
        if self.frozen_columns.is_empty() {
            return;
        }
        let cols = self.value.dim(self.value.rank() - 1);
        let g = self.grad.data_mut();
        for row in g.chunks_mut(cols) {
            for &c in &self.frozen_columns {
                row[c] = T::zero();
            }
        }
    }
}

/// Registry of named tensors owned by a model: trainable weights plus
/// non-trainable buffers such as batch-norm running statistics.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name '{name}'")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape())?;
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable,
            frozen_columns: Vec::new(),
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total element count of trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn freeze_column(&mut self, id: ParamId, column: usize) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.rank() != 2 || column >= p.value.dim(1) {
            return Err(Error::invalid(format!(
                "cannot freeze column {column} of '{}' with shape {:?}",
                p.name,
                p.value.shape()
            )));
        }
        if !p.frozen_columns.contains(&column) {
            p.frozen_columns.push(column);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds `grad` into the gradient of `id`; no-op for non-trainable entries.
    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[T]) {
        let p = &mut self.params[id.0];
        if !p.trainable {
            return;
        }
        for (g, &d) in p.grad.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
        p.mask_grad();
    }

    /// Replaces the value of `id`, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_value",
                format!("'{}': {:?} vs {:?}", p.name, p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }
}

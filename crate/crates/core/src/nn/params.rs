use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
    first_moment: Tensor,
    second_moment: Tensor,
}

/// Named trainable tensors with their gradient accumulators and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.slots.len());
        let zeros = Tensor::zeros(value.shape());
        self.slots.push(Slot {
            name: name.clone(),
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    /// Registers a `[fan_in, fan_out]` matrix drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_entries(&self) -> usize {
        self.slots.iter().map(|s| s.value.numel()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) -> Result<()> {
        let slot = &mut self.slots[id.0];
        if slot.grad.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "gradient for `{}` has shape {:?}, parameter has {:?}",
                slot.name,
                grad.shape(),
                slot.value.shape()
            )));
        }
        slot.grad.add_assign(grad);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for slot in &mut self.slots {
            slot.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.slots
            .iter()
            .map(|s| s.grad.sum_of_squares())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for slot in &mut self.slots {
            slot.grad.scale_in_place(factor);
        }
    }

    /// Sets every parameter value to zero.
    pub fn zero_values(&mut self) {
        for slot in &mut self.slots {
            slot.value.data_mut().fill(0.0);
        }
    }

    pub(crate) fn adam_slots_mut(
        &mut self,
    ) -> impl Iterator<Item = (&mut Tensor, &mut Tensor, &mut Tensor, &mut Tensor)> {
        self.slots.iter_mut().map(|s| {
            (
                &mut s.value,
                &mut s.grad,
                &mut s.first_moment,
                &mut s.second_moment,
            )
        })
    }

    /// Moment estimates for a parameter, in `(first, second)` order.
    pub fn moments(&self, id: ParamId) -> (&Tensor, &Tensor) {
        let s = &self.slots[id.0];
        (&s.first_moment, &s.second_moment)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.value))
    }
}

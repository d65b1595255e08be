use std::collections::BTreeMap;

use indexmap::IndexMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Every trainable tensor of a model together with its gradient accumulator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: IndexMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; names must be unique.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        let (idx, _) = self.params.insert_full(name.to_string(), Param { value, grad });
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).unwrap()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Adds `scale * buffer` into the gradient accumulators.
    pub fn accumulate(&mut self, buffer: &GradBuffer, scale: f64) {
        for (idx, slot) in buffer.slots.iter().enumerate() {
            let grad = &mut self.params[idx].grad;
            match slot {
                GradSlot::Empty => {}
                GradSlot::Dense(g) => {
                    for (a, b) in grad.data_mut().iter_mut().zip(g) {
                        *a += scale * b;
                    }
                }
                GradSlot::Rows(rows) => {
                    for (&r, g) in rows {
                        for (a, b) in grad.row_mut(r).iter_mut().zip(g) {
                            *a += scale * b;
                        }
                    }
                }
            }
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.params.values().all(|p| p.grad.is_finite())
    }

    pub fn values_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }
}

#[derive(Debug, Clone, Default)]
enum GradSlot {
    #[default]
    Empty,
    Dense(Vec<f64>),
    /// Sparse row gradients for lookup tables.
    Rows(BTreeMap<usize, Vec<f64>>),
}

/// Per-example gradient scratch space.
///
/// Lookup tables only touch the rows that were looked up, so their
/// gradients are kept sparse; everything else is dense.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    slots: Vec<GradSlot>,
    shapes: Vec<Vec<usize>>,
}

impl GradBuffer {
    pub fn for_params(params: &ParameterSet) -> Self {
        GradBuffer {
            slots: vec![GradSlot::Empty; params.len()],
            shapes: params.iter().map(|(_, p)| p.value.shape().to_vec()).collect(),
        }
    }

    pub fn dense_mut(&mut self, id: ParamId) -> &mut [f64] {
        let len = self.shapes[id.0].iter().product();
        let slot = &mut self.slots[id.0];
        if !matches!(slot, GradSlot::Dense(_)) {
            *slot = GradSlot::Dense(vec![0.0; len]);
        }
        match slot {
            GradSlot::Dense(g) => g,
            _ => unreachable!(),
        }
    }

    pub fn row_mut(&mut self, id: ParamId, row: usize) -> &mut [f64] {
        let width = self.shapes[id.0].iter().skip(1).product();
        let slot = &mut self.slots[id.0];
        if !matches!(slot, GradSlot::Rows(_)) {
            *slot = GradSlot::Rows(BTreeMap::new());
        }
        match slot {
            GradSlot::Rows(rows) => rows.entry(row).or_insert_with(|| vec![0.0; width]),
            _ => unreachable!(),
        }
    }

    /// Dense view of one slot, materialized. Intended for tests.
    pub fn to_dense(&self, id: ParamId) -> Vec<f64> {
        let shape = &self.shapes[id.0];
        let len: usize = shape.iter().product();
        let width: usize = shape.iter().skip(1).product();
        let mut out = vec![0.0; len];
        match &self.slots[id.0] {
            GradSlot::Empty => {}
            GradSlot::Dense(g) => out.copy_from_slice(g),
            GradSlot::Rows(rows) => {
                for (&r, g) in rows {
                    out[r * width..(r + 1) * width].copy_from_slice(g);
                }
            }
        }
        out
    }
}

use std::collections::HashMap;

use super::tensor::Tensor;

/// A named tensor owned by a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Layer group, counted from the input side.
    pub group: usize,
    /// Buffers (batch-norm running statistics) are stored but never optimized.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn add(&mut self, name: &str, value: Tensor, group: usize) -> ParamId {
        self.insert(name, value, group, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor, group: usize) -> ParamId {
        self.insert(name, value, group, false)
    }

    fn insert(&mut self, name: &str, value: Tensor, group: usize, trainable: bool) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter `{name}`"
        );
        let id = self.entries.len();
        self.index.insert(name.to_string(), id);
        self.entries.push(Param {
            name: name.to_string(),
            value,
            group,
            trainable,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn n_groups(&self) -> usize {
        self.entries.iter().map(|p| p.group + 1).max().unwrap_or(0)
    }

    /// Total count of trainable scalars.
    pub fn n_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }
}

/// Gradients aligned with a [`ParamStore`]; `None` for untouched parameters.
#[derive(Clone, Debug, Default)]
pub struct Grads {
    pub(crate) slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn new(n: usize) -> Self {
        Grads {
            slots: vec![None; n],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.slots[id.0] {
            Some(t) => t.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.slots.iter().flatten().map(Tensor::sq_norm).sum()
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.slots.iter_mut().flatten() {
            t.scale(k);
        }
    }
}

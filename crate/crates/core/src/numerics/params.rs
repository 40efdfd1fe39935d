use super::Tensor;
use crate::{Error, Result};

/// One named parameter tensor plus its gradient accumulator and optimizer
/// moments. Moments start at zero and the gradient always matches the value's
/// shape.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub(crate) m: Tensor,
    pub(crate) v: Tensor,
}

impl ParamEntry {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros_like(&value);
        let m = Tensor::zeros_like(&value);
        let v = Tensor::zeros_like(&value);
        ParamEntry {
            name: name.into(),
            value,
            grad,
            m,
            v,
        }
    }
}

/// A named collection of parameter tensors for one network.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    pub entries: Vec<ParamEntry>,
    pub step: u64,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>) -> Self {
        ParamGroup {
            name: name.into(),
            entries: Vec::new(),
            step: 0,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.entries.push(ParamEntry::new(name, value));
        self.entries.len() - 1
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn clear_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }
}

/// Handle naming one entry inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntryRef {
    pub group: usize,
    pub entry: usize,
}

/// All parameter groups owned by one model. Groups are addressed by index so
/// tapes can route gradients back without holding references.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    pub groups: Vec<ParamGroup>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { groups: Vec::new() }
    }

    pub fn add_group(&mut self, name: impl Into<String>) -> usize {
        self.groups.push(ParamGroup::new(name));
        self.groups.len() - 1
    }

    pub fn push_entry(&mut self, group: usize, name: impl Into<String>, value: Tensor) -> EntryRef {
        let entry = self.groups[group].push(name, value);
        EntryRef { group, entry }
    }

    pub fn value(&self, r: EntryRef) -> &Tensor {
        &self.groups[r.group].entries[r.entry].value
    }

    pub fn value_mut(&mut self, r: EntryRef) -> &mut Tensor {
        &mut self.groups[r.group].entries[r.entry].value
    }

    pub fn grad(&self, r: EntryRef) -> &Tensor {
        &self.groups[r.group].entries[r.entry].grad
    }

    pub fn group_by_name(&self, name: &str) -> Result<&ParamGroup> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Data(format!("missing parameter group '{name}'")))
    }

    pub fn clear_grads(&mut self) {
        for g in &mut self.groups {
            g.clear_grads();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups
            .iter()
            .all(|g| g.entries.iter().all(|e| e.value.is_finite()))
    }

    pub fn numel(&self) -> usize {
        self.groups.iter().map(|g| g.numel()).sum()
    }
}

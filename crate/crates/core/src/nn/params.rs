use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// What a named tensor is for. Buffers are stored alongside parameters but are
/// never optimized, sampled, or counted as weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Weight,
    Bias,
    NormScale,
    NormShift,
    Embedding,
    RunningMean,
    RunningVar,
}

impl TensorRole {
    pub fn is_buffer(self) -> bool {
        matches!(self, TensorRole::RunningMean | TensorRole::RunningVar)
    }

    pub fn is_learnable(self) -> bool {
        !self.is_buffer()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub module: String,
    pub shape: Vec<usize>,
    pub role: TensorRole,
    /// Fan-in used by the Kaiming initializer (0 for non-weight tensors).
    pub fan_in: usize,
    pub value: Vec<f32>,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Ordered table of every named tensor in a network.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        module: impl Into<String>,
        shape: &[usize],
        role: TensorRole,
        fan_in: usize,
    ) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate tensor name {name}");
        let numel = shape.iter().product();
        let fill = match role {
            TensorRole::NormScale | TensorRole::RunningVar => 1.0,
            _ => 0.0,
        };
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            module: module.into(),
            shape: shape.to_vec(),
            role,
            fan_in,
            value: vec![fill; numel],
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.entries[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry> {
        self.id_of(name).map(|id| self.entry(id))
    }

    pub fn learnable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.role.is_learnable())
            .map(|e| e.numel())
            .sum()
    }
}

/// Gradient buffers aligned with a [`ParamStore`]; buffer tensors get empty slots.
#[derive(Clone, Debug)]
pub struct Grads {
    data: Vec<Vec<f32>>,
}

impl Grads {
    pub fn zeros(store: &ParamStore) -> Self {
        let data = store
            .entries()
            .iter()
            .map(|e| {
                if e.role.is_learnable() {
                    vec![0.0; e.numel()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        Self { data }
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.data[id.0]
    }

    pub fn slots(&self) -> &[Vec<f32>] {
        &self.data
    }

    pub fn zero(&mut self) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

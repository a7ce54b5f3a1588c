use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TensorRole;

use super::{partition_of, ArchSpec, ProbeableNetwork};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotTag {
    Initial,
    Best,
    Pretrained,
}

impl fmt::Display for SnapshotTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SnapshotTag::Initial => "initial",
            SnapshotTag::Best => "best",
            SnapshotTag::Pretrained => "pretrained",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SnapshotTensor {
    pub module: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug)]
struct Inner {
    arch: ArchSpec,
    arch_id: String,
    tag: SnapshotTag,
    created_at: String,
    tensors: IndexMap<String, SnapshotTensor>,
}

/// Immutable copy of every named tensor (parameters and buffers) of a network.
/// Cloning shares the underlying storage.
#[derive(Clone, Debug)]
pub struct WeightSnapshot(Arc<Inner>);

impl WeightSnapshot {
    pub(crate) fn from_parts(
        arch: ArchSpec,
        arch_id: String,
        tag: SnapshotTag,
        created_at: String,
        tensors: IndexMap<String, SnapshotTensor>,
    ) -> Self {
        Self(Arc::new(Inner { arch, arch_id, tag, created_at, tensors }))
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.0.arch
    }

    pub fn arch_id(&self) -> &str {
        &self.0.arch_id
    }

    pub fn tag(&self) -> SnapshotTag {
        self.0.tag
    }

    pub fn created_at(&self) -> &str {
        &self.0.created_at
    }

    pub fn tensors(&self) -> &IndexMap<String, SnapshotTensor> {
        &self.0.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&SnapshotTensor> {
        self.0.tensors.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.0.tensors.is_empty()
    }

    /// Same tensors with a different tag (and, optionally, without the head).
    pub fn retagged(&self, tag: SnapshotTag, strip_head: bool) -> Self {
        let tensors = self
            .0
            .tensors
            .iter()
            .filter(|(_, t)| !(strip_head && t.module == "head"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Self::from_parts(self.0.arch.clone(), self.0.arch_id.clone(), tag, self.0.created_at.clone(), tensors)
    }

    /// Bitwise equality of tensor names, shapes and values.
    pub fn same_values(&self, other: &WeightSnapshot) -> bool {
        self.0.tensors.len() == other.0.tensors.len()
            && self.0.tensors.iter().zip(other.0.tensors.iter()).all(|((ka, a), (kb, b))| {
                ka == kb && a.shape == b.shape && bits_eq(&a.values, &b.values)
            })
    }
}

impl PartialEq for WeightSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.0.arch == other.0.arch
            && self.0.arch_id == other.0.arch_id
            && self.0.tag == other.0.tag
            && self.0.created_at == other.0.created_at
            && self.same_values(other)
    }
}

pub(crate) fn bits_eq(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn snapshot_weights(network: &ProbeableNetwork, tag: SnapshotTag) -> WeightSnapshot {
    let tensors = network
        .params()
        .entries()
        .iter()
        .map(|e| {
            (
                e.name.clone(),
                SnapshotTensor { module: e.module.clone(), role: e.role, shape: e.shape.clone(), values: e.value.clone() },
            )
        })
        .collect();
    WeightSnapshot::from_parts(
        network.arch().clone(),
        network.arch_id().to_string(),
        tag,
        chrono::Utc::now().to_rfc3339(),
        tensors,
    )
}

fn check_arch(network: &ProbeableNetwork, snapshot: &WeightSnapshot) -> Result<()> {
    if snapshot.arch_id() != network.arch_id() {
        return Err(Error::Compatibility(format!(
            "snapshot arch {} does not match network arch {}",
            snapshot.arch_id(),
            network.arch_id()
        )));
    }
    Ok(())
}

fn copy_modules(network: &mut ProbeableNetwork, snapshot: &WeightSnapshot, modules: Option<&HashSet<&str>>) -> Result<()> {
    for entry in network.params_mut().entries_mut() {
        if modules.is_some_and(|m| !m.contains(entry.module.as_str())) {
            continue;
        }
        let src = snapshot
            .tensor(&entry.name)
            .ok_or_else(|| Error::Compatibility(format!("snapshot lacks tensor {}", entry.name)))?;
        if src.shape != entry.shape {
            return Err(Error::Compatibility(format!(
                "tensor {} has shape {:?} in snapshot but {:?} in network",
                entry.name, src.shape, entry.shape
            )));
        }
        entry.value.copy_from_slice(&src.values);
    }
    Ok(())
}

/// Overwrites every tensor of `network` with the snapshot's values.
pub fn restore_all(network: &mut ProbeableNetwork, snapshot: &WeightSnapshot) -> Result<()> {
    check_arch(network, snapshot)?;
    copy_modules(network, snapshot, None)
}

/// Restores the tensors (parameters and buffers) of one partition group.
pub fn restore_module(network: &mut ProbeableNetwork, snapshot: &WeightSnapshot, group_id: &str) -> Result<()> {
    check_arch(network, snapshot)?;
    let partition = partition_of(network)?;
    let group = partition.group(group_id)?;
    let modules: HashSet<&str> = group.module_ids.iter().map(String::as_str).collect();
    copy_modules(network, snapshot, Some(&modules))
}

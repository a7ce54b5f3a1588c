use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Capacity, Family, FamilyDims, ProbeableNetwork};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionGroup {
    pub group_id: String,
    pub module_ids: Vec<String>,
    pub tap_id: Option<String>,
}

/// Ordered module groups used for WT-ST boundaries, re-init units and probe
/// taps. Groups cover every learnable tensor except the task head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulePartition {
    pub arch_id: String,
    pub groups: Vec<PartitionGroup>,
    pub head_module: String,
    /// Number of valid transfer depths, `groups.len() + 1`.
    pub wt_st_levels: usize,
}

impl ModulePartition {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, group_id: &str) -> Result<&PartitionGroup> {
        self.groups
            .iter()
            .find(|g| g.group_id == group_id)
            .ok_or_else(|| Error::Lookup(format!("no group `{group_id}` in {}", self.arch_id)))
    }

    pub fn group_index(&self, group_id: &str) -> Result<usize> {
        self.groups
            .iter()
            .position(|g| g.group_id == group_id)
            .ok_or_else(|| Error::Lookup(format!("no group `{group_id}` in {}", self.arch_id)))
    }

    /// Index of the group owning `module_id`, `None` for the head.
    pub fn group_of_module(&self, module_id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.module_ids.iter().any(|m| m == module_id))
    }

    pub fn tap_ids(&self) -> Vec<&str> {
        self.groups.iter().filter_map(|g| g.tap_id.as_deref()).collect()
    }
}

fn group(id: &str, modules: Vec<String>) -> PartitionGroup {
    PartitionGroup { group_id: id.to_string(), module_ids: modules, tap_id: Some(id.to_string()) }
}

/// Canonical partition registry keyed by arch id (`family/capacity[/truncN]`).
pub fn partition_for_arch_id(arch_id: &str) -> Result<ModulePartition> {
    let unregistered = || Error::Lookup(format!("unregistered architecture `{arch_id}`"));
    let parts: Vec<&str> = arch_id.split('/').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(unregistered());
    }
    let family = Family::parse(parts[0]).map_err(|_| unregistered())?;
    let capacity = Capacity::parse(parts[1]).map_err(|_| unregistered())?;
    let dims = FamilyDims::of(family, capacity);
    let depth = match parts.get(2) {
        None => dims.depth,
        Some(s) => {
            let n: usize = s.strip_prefix("trunc").and_then(|v| v.parse().ok()).ok_or_else(unregistered)?;
            if family != Family::MiniVit || n == 0 || n > dims.depth {
                return Err(unregistered());
            }
            n
        }
    };
    let groups = match family {
        Family::MiniCnn => {
            let mut g = vec![group("stem_conv", vec!["stem_conv".into()]), group("stem_norm", vec!["stem_norm".into()])];
            for s in 1..=depth {
                g.push(group(&format!("stage{s}"), vec![format!("stage{s}.block1"), format!("stage{s}.block2")]));
            }
            g
        }
        Family::MiniVit => {
            let mut g = vec![group("patchifier", vec!["patchifier".into()])];
            for b in 1..=depth {
                g.push(group(&format!("block{b}"), vec![format!("block{b}.attn"), format!("block{b}.mlp")]));
            }
            g.push(group("final_norm", vec!["final_norm".into()]));
            g
        }
    };
    let wt_st_levels = groups.len() + 1;
    Ok(ModulePartition { arch_id: arch_id.to_string(), groups, head_module: "head".into(), wt_st_levels })
}

pub fn partition_of(network: &ProbeableNetwork) -> Result<ModulePartition> {
    partition_for_arch_id(network.arch_id())
}

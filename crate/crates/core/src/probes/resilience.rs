//! Re-initialization robustness and per-group ℓ2 weight drift.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::netlab::{restore_module, snapshot_weights, ModulePartition, ProbeableNetwork, SnapshotTag, WeightSnapshot};

use super::{LayerSeries, SeriesKind, SeriesPoint};

/// Reverts one group at a time to `initial`, scores the network, and puts the
/// trained weights back before moving on. The network ends in its trained state.
pub fn reinit_robustness<F>(
    network: &mut ProbeableNetwork,
    initial: &WeightSnapshot,
    partition: &ModulePartition,
    mut evaluate: F,
) -> Result<LayerSeries>
where
    F: FnMut(&ProbeableNetwork) -> Result<f64>,
{
    if initial.arch_id() != network.arch_id() || partition.arch_id != network.arch_id() {
        return Err(Error::Compatibility(format!(
            "snapshot {} / partition {} do not match network {}",
            initial.arch_id(),
            partition.arch_id,
            network.arch_id()
        )));
    }
    let trained = snapshot_weights(network, SnapshotTag::Best);
    let baseline = evaluate(network)?;
    let mut points = Vec::with_capacity(partition.len());
    for g in &partition.groups {
        restore_module(network, initial, &g.group_id)?;
        let score = evaluate(network);
        restore_module(network, &trained, &g.group_id)?;
        points.push(SeriesPoint { id: g.group_id.clone(), value: score?, stderr: 0.0 });
    }
    let mut s = LayerSeries::new(SeriesKind::Robustness, points);
    s.baseline = Some(baseline);
    Ok(s)
}

/// Per group: `‖w_final − w_initial‖₂ / n` over the group's learnable tensors,
/// `n` their total element count. Buffers and the head are excluded.
pub fn l2_drift(initial: &WeightSnapshot, last: &WeightSnapshot, partition: &ModulePartition) -> Result<LayerSeries> {
    if initial.arch_id() != last.arch_id() || initial.arch_id() != partition.arch_id {
        return Err(Error::Compatibility(format!(
            "cannot compare {} with {} under partition {}",
            initial.arch_id(),
            last.arch_id(),
            partition.arch_id
        )));
    }
    let mut points = Vec::with_capacity(partition.len());
    for g in &partition.groups {
        let modules: HashSet<&str> = g.module_ids.iter().map(String::as_str).collect();
        let mut sq = 0.0f64;
        let mut count = 0usize;
        for (name, a) in initial.tensors() {
            if !modules.contains(a.module.as_str()) || !a.role.is_learnable() {
                continue;
            }
            let b = last.tensor(name).ok_or_else(|| Error::Compatibility(format!("tensor {name} missing")))?;
            if b.shape != a.shape {
                return Err(Error::Compatibility(format!("tensor {name} changed shape")));
            }
            sq += a.values.iter().zip(&b.values).map(|(x, y)| (*y as f64 - *x as f64).powi(2)).sum::<f64>();
            count += a.values.len();
        }
        let value = if count == 0 { 0.0 } else { sq.sqrt() / count as f64 };
        points.push(SeriesPoint { id: g.group_id.clone(), value, stderr: 0.0 });
    }
    let mut s = LayerSeries::new(SeriesKind::L2Drift, points);
    s.notes.push("normalization running statistics excluded".into());
    Ok(s)
}

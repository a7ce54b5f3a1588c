//! Initialization strategies: random (Kaiming), stats transfer, weight
//! transfer, and the prefix-WT / suffix-ST hybrid.
//!
//! Every tensor draws from its own random stream derived from
//! `(seed, purpose, tensor name)`, so results do not depend on the order in
//! which tensors are visited.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::netlab::{partition_of, ProbeableNetwork, WeightSnapshot};
use crate::nn::{ParamEntry, TensorRole};

/// Standard deviation for cls-token and positional embeddings under random init.
pub const EMBEDDING_STD: f64 = 0.02;

pub fn tensor_rng(seed: u64, purpose: &str, name: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(format!("{purpose}:{seed}:{name}").as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorStats {
    pub name: String,
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub tensors: Vec<TensorStats>,
}

impl LayerStats {
    pub fn get(&self, name: &str) -> Option<&TensorStats> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

pub fn mean_and_sigma(values: &[f32]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = values.iter().map(|v| *v as f64).sum::<f64>() / n;
    let var = values.iter().map(|v| (*v as f64 - mu).powi(2)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Per-tensor mean and population standard deviation of every learnable tensor.
pub fn weight_stats(snapshot: &WeightSnapshot) -> Result<LayerStats> {
    if snapshot.is_empty() {
        return Err(Error::Data("snapshot has no tensors".into()));
    }
    let tensors = snapshot
        .tensors()
        .iter()
        .filter(|(_, t)| t.role.is_learnable() && !t.values.is_empty())
        .map(|(name, t)| {
            let (mu, sigma) = mean_and_sigma(&t.values);
            TensorStats { name: name.clone(), mu, sigma, count: t.values.len() }
        })
        .collect();
    Ok(LayerStats { tensors })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitKind {
    #[serde(rename = "RI")]
    Ri,
    #[serde(rename = "ST")]
    St,
    #[serde(rename = "WT")]
    Wt,
    #[serde(rename = "WT_ST")]
    WtSt,
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::Ri => "RI",
            InitKind::St => "ST",
            InitKind::Wt => "WT",
            InitKind::WtSt => "WT_ST",
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Declarative initialization recipe; serialized as `init: {kind, n, source_checkpoint, seed}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitScheme {
    pub kind: InitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_checkpoint: Option<String>,
    pub seed: u64,
}

impl InitScheme {
    pub fn random(seed: u64) -> Self {
        Self { kind: InitKind::Ri, n: None, source_checkpoint: None, seed }
    }

    pub fn needs_source(&self) -> bool {
        self.kind != InitKind::Ri
    }

    /// Transfer depth in `0..=groups`: RI/ST → 0, WT → groups.
    pub fn depth(&self, groups: usize) -> usize {
        match self.kind {
            InitKind::Ri | InitKind::St => 0,
            InitKind::Wt => groups,
            InitKind::WtSt => self.n.unwrap_or(0),
        }
    }

    /// Maps the WT_ST endpoints onto ST (n = 0) and WT (n = groups).
    pub fn canonical(&self, groups: usize) -> Self {
        let mut s = self.clone();
        if self.kind == InitKind::WtSt {
            match self.n.unwrap_or(0) {
                0 => {
                    s.kind = InitKind::St;
                    s.n = None;
                }
                n if n == groups => {
                    s.kind = InitKind::Wt;
                    s.n = None;
                }
                _ => {}
            }
        }
        s
    }

    /// Short label, e.g. `WT`, `ST`, `WT-ST-3/3`.
    pub fn label(&self, groups: usize) -> String {
        match self.kind {
            InitKind::WtSt => {
                let n = self.n.unwrap_or(0);
                format!("WT-ST-{n}/{}", groups.saturating_sub(n))
            }
            k => k.to_string(),
        }
    }
}

fn kaiming_fill(entry: &mut ParamEntry, seed: u64) {
    match entry.role {
        TensorRole::Weight => {
            let std = (2.0 / entry.fan_in.max(1) as f64).sqrt();
            let mut rng = tensor_rng(seed, "ri", &entry.name);
            for v in entry.value.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = (z * std) as f32;
            }
        }
        TensorRole::Embedding => {
            let mut rng = tensor_rng(seed, "ri", &entry.name);
            for v in entry.value.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = (z * EMBEDDING_STD) as f32;
            }
        }
        TensorRole::Bias | TensorRole::NormShift | TensorRole::RunningMean => entry.value.fill(0.0),
        TensorRole::NormScale | TensorRole::RunningVar => entry.value.fill(1.0),
    }
}

fn reset_buffer(entry: &mut ParamEntry) {
    match entry.role {
        TensorRole::RunningMean => entry.value.fill(0.0),
        TensorRole::RunningVar => entry.value.fill(1.0),
        _ => {}
    }
}

/// Kaiming fan-in normal weights, zero biases and shifts, unit norm scales.
pub fn init_random(network: &mut ProbeableNetwork, seed: u64) {
    for entry in network.params_mut().entries_mut() {
        kaiming_fill(entry, seed);
    }
}

fn stats_fill(entry: &mut ParamEntry, stats: &TensorStats, seed: u64) -> Result<()> {
    if stats.count != entry.numel() {
        return Err(Error::Compatibility(format!(
            "stats for {} cover {} elements, tensor has {}",
            entry.name,
            stats.count,
            entry.numel()
        )));
    }
    if stats.sigma == 0.0 {
        entry.value.fill(stats.mu as f32);
        return Ok(());
    }
    let mut rng = tensor_rng(seed, "st", &entry.name);
    for v in entry.value.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = (stats.mu + stats.sigma * z) as f32;
    }
    Ok(())
}

/// Samples every learnable non-head tensor from `N(mu_i, sigma_i^2)`; the head
/// gets random init and buffers are reset.
pub fn init_stats_transfer(network: &mut ProbeableNetwork, stats: &LayerStats, seed: u64) -> Result<()> {
    for entry in network.params_mut().entries_mut() {
        if entry.module == "head" {
            kaiming_fill(entry, seed);
        } else if entry.role.is_buffer() {
            reset_buffer(entry);
        } else {
            let s = stats
                .get(&entry.name)
                .ok_or_else(|| Error::Compatibility(format!("no stats for tensor {}", entry.name)))?;
            stats_fill(entry, s, seed)?;
        }
    }
    Ok(())
}

fn check_source(network: &ProbeableNetwork, snapshot: &WeightSnapshot) -> Result<()> {
    let (a, b) = (network.arch(), snapshot.arch());
    if a.family != b.family || a.capacity != b.capacity || a.input_shape != b.input_shape {
        return Err(Error::Compatibility(format!(
            "source {} ({}) cannot initialize {} ({})",
            snapshot.arch_id(),
            b.input_shape,
            network.arch_id(),
            a.input_shape
        )));
    }
    for e in network.params().entries().iter().filter(|e| e.module != "head") {
        match snapshot.tensor(&e.name) {
            Some(t) if t.shape == e.shape => {}
            Some(t) => {
                return Err(Error::Compatibility(format!(
                    "tensor {} is {:?} in source but {:?} in target",
                    e.name, t.shape, e.shape
                )))
            }
            None => return Err(Error::Compatibility(format!("source lacks tensor {}", e.name))),
        }
    }
    Ok(())
}

/// Copies groups `1..=n` from `snapshot`; the remaining groups are stats-sampled
/// from the snapshot's per-tensor statistics. The head is always re-initialized.
pub fn build_wt_st(network: &mut ProbeableNetwork, snapshot: &WeightSnapshot, n: usize, seed: u64) -> Result<()> {
    let partition = partition_of(network)?;
    if n > partition.len() {
        return Err(Error::Config(format!(
            "transfer depth {n} outside 0..={} for {}",
            partition.len(),
            network.arch_id()
        )));
    }
    check_source(network, snapshot)?;
    for entry in network.params_mut().entries_mut() {
        let group = partition.group_of_module(&entry.module);
        match group {
            None => kaiming_fill(entry, seed),
            Some(g) if g < n => {
                let src = snapshot.tensor(&entry.name).expect("checked by check_source");
                entry.value.copy_from_slice(&src.values);
            }
            Some(_) if entry.role.is_buffer() => reset_buffer(entry),
            Some(_) => {
                let src = snapshot.tensor(&entry.name).expect("checked by check_source");
                let (mu, sigma) = mean_and_sigma(&src.values);
                let stats = TensorStats { name: entry.name.clone(), mu, sigma, count: src.values.len() };
                stats_fill(entry, &stats, seed)?;
            }
        }
    }
    Ok(())
}

/// All non-head tensors (including norm buffers) copied from `snapshot`; head random.
pub fn init_weight_transfer(network: &mut ProbeableNetwork, snapshot: &WeightSnapshot, seed: u64) -> Result<()> {
    let groups = partition_of(network)?.len();
    build_wt_st(network, snapshot, groups, seed)
}

/// Applies a scheme; `source` is required for every kind except RI.
pub fn apply_scheme(network: &mut ProbeableNetwork, scheme: &InitScheme, source: Option<&WeightSnapshot>) -> Result<()> {
    let groups = partition_of(network)?.len();
    let scheme = scheme.canonical(groups);
    let need = || Error::Config(format!("{} initialization needs a source checkpoint", scheme.kind));
    match scheme.kind {
        InitKind::Ri => {
            init_random(network, scheme.seed);
            Ok(())
        }
        InitKind::St => {
            let src = source.ok_or_else(need)?;
            check_source(network, src)?;
            init_stats_transfer(network, &weight_stats(src)?, scheme.seed)
        }
        InitKind::Wt => init_weight_transfer(network, source.ok_or_else(need)?, scheme.seed),
        InitKind::WtSt => {
            let n = scheme.n.ok_or_else(|| Error::Config("WT_ST needs a transfer depth n".into()))?;
            build_wt_st(network, source.ok_or_else(need)?, n, scheme.seed)
        }
    }
}

#[cfg(test)]
mod tests;

//! Probeable networks: desk-scale CNN and ViT families, their module
//! partitions, activation taps, weight snapshots and checkpoints.

mod checkpoint;
mod cnn;
mod partition;
mod snapshot;
mod vit;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::initkit;
use crate::nn::{Fmap, Grads, ParamStore};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorIndexEntry};
pub use partition::{partition_for_arch_id, partition_of, ModulePartition, PartitionGroup};
pub use snapshot::{restore_all, restore_module, snapshot_weights, SnapshotTag, SnapshotTensor, WeightSnapshot};

use cnn::CnnGraph;
use vit::VitGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    MiniCnn,
    MiniVit,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::MiniCnn => "mini_cnn",
            Family::MiniVit => "mini_vit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mini_cnn" => Ok(Family::MiniCnn),
            "mini_vit" => Ok(Family::MiniVit),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacity {
    Tiny,
    Small,
    Base,
}

impl Capacity {
    pub fn as_str(self) -> &'static str {
        match self {
            Capacity::Tiny => "tiny",
            Capacity::Small => "small",
            Capacity::Base => "base",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Capacity::Tiny),
            "small" => Ok(Capacity::Small),
            "base" => Ok(Capacity::Base),
            other => Err(Error::Config(format!("unknown capacity `{other}`"))),
        }
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl InputShape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }
}

impl fmt::Display for InputShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

/// Everything needed to rebuild an architecture deterministically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub family: Family,
    pub capacity: Capacity,
    pub input_shape: InputShape,
    pub num_classes: usize,
    pub seed: u64,
    /// Transformer depth override (truncated ViTs); `None` = capacity default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
}

impl ArchSpec {
    pub fn new(family: Family, capacity: Capacity, input_shape: InputShape, num_classes: usize, seed: u64) -> Self {
        Self { family, capacity, input_shape, num_classes, seed, depth: None }
    }

    pub fn arch_id(&self) -> String {
        match self.depth {
            Some(d) if d != self.family_dims().depth => {
                format!("{}/{}/trunc{}", self.family, self.capacity, d)
            }
            _ => format!("{}/{}", self.family, self.capacity),
        }
    }

    pub(crate) fn family_dims(&self) -> FamilyDims {
        FamilyDims::of(self.family, self.capacity)
    }

    pub fn effective_depth(&self) -> usize {
        self.depth.unwrap_or(self.family_dims().depth)
    }
}

/// Width/depth table for the desk-scale families.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FamilyDims {
    /// CNN stage widths or ViT embedding dim in `widths[0]`.
    pub widths: [usize; 4],
    pub depth: usize,
    pub heads: usize,
    pub patch: usize,
    pub mlp_ratio: usize,
}

impl FamilyDims {
    fn of(family: Family, capacity: Capacity) -> Self {
        match family {
            Family::MiniCnn => {
                let base = [16, 32, 64, 128];
                let widths = match capacity {
                    Capacity::Tiny => base.map(|w| w / 2),
                    Capacity::Small => base,
                    Capacity::Base => base.map(|w| w * 2),
                };
                Self { widths, depth: 4, heads: 0, patch: 0, mlp_ratio: 0 }
            }
            Family::MiniVit => {
                let (dim, depth) = match capacity {
                    Capacity::Tiny => (96, 4),
                    Capacity::Small => (128, 6),
                    Capacity::Base => (192, 8),
                };
                Self { widths: [dim, 0, 0, 0], depth, heads: 4, patch: 4, mlp_ratio: 4 }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Stem,
    ConvStage,
    ResidualBlock,
    Patchifier,
    TransformerBlock,
    Attention,
    Mlp,
    Norm,
    Head,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleInfo {
    pub id: String,
    pub kind: ModuleKind,
}

/// Layout of one sample's activation at a tap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    SpatialMap { c: usize, h: usize, w: usize },
    TokenSeq { tokens: usize, dim: usize, cls_index: Option<usize> },
}

impl Layout {
    pub fn per_sample(&self) -> usize {
        match *self {
            Layout::SpatialMap { c, h, w } => c * h * w,
            Layout::TokenSeq { tokens, dim, .. } => tokens * dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationBatch {
    pub tap_id: String,
    pub layout: Layout,
    /// `batch × layout` values, sample-major.
    pub values: Vec<f32>,
    pub sample_ids: Vec<u64>,
}

impl ActivationBatch {
    pub fn batch(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let per = self.layout.per_sample();
        &self.values[i * per..(i + 1) * per]
    }
}

/// Images plus stable sample identifiers.
#[derive(Clone, Debug)]
pub struct InputBatch {
    pub images: Fmap,
    pub sample_ids: Vec<u64>,
}

/// Softmax attention weights of one transformer block, `[batch, heads, tokens, tokens]`.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    pub layer_id: String,
    pub batch: usize,
    pub heads: usize,
    pub tokens: usize,
    pub cls_index: Option<usize>,
    pub values: Vec<f32>,
}

/// Collects requested taps during a forward pass.
pub(crate) struct TapSink<'a> {
    wanted: HashSet<&'a str>,
    pub(crate) got: Vec<(String, Layout, Vec<f32>)>,
}

impl<'a> TapSink<'a> {
    pub(crate) fn new(taps: &[&'a str]) -> Self {
        Self { wanted: taps.iter().copied().collect(), got: Vec::new() }
    }

    pub(crate) fn none() -> Self {
        Self { wanted: HashSet::new(), got: Vec::new() }
    }

    pub(crate) fn offer(&mut self, id: &str, layout: Layout, values: &[f32]) {
        if self.wanted.contains(id) {
            self.got.push((id.to_string(), layout, values.to_vec()));
        }
    }
}

#[derive(Clone, Debug)]
enum Graph {
    Cnn(CnnGraph),
    Vit(VitGraph),
}

/// Cached intermediate values of one training forward pass.
pub struct Tape(TapeInner);

enum TapeInner {
    Cnn(cnn::CnnTape),
    Vit(vit::VitTape),
}

/// A network whose parameters are partitioned into named module groups and
/// whose intermediate activations can be tapped.
#[derive(Clone, Debug)]
pub struct ProbeableNetwork {
    arch: ArchSpec,
    arch_id: String,
    modules: Vec<ModuleInfo>,
    params: ParamStore,
    graph: Graph,
}

/// Builds a network and applies the Kaiming (random-init) scheme seeded by `spec.seed`.
pub fn build_model(spec: &ArchSpec) -> Result<ProbeableNetwork> {
    let mut net = build_uninitialized(spec)?;
    initkit::init_random(&mut net, spec.seed);
    Ok(net)
}

pub(crate) fn build_uninitialized(spec: &ArchSpec) -> Result<ProbeableNetwork> {
    if spec.num_classes < 2 {
        return Err(Error::Config(format!("num_classes must be >= 2, got {}", spec.num_classes)));
    }
    let dims = spec.family_dims();
    let InputShape { h, w, c } = spec.input_shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("empty input shape {}", spec.input_shape)));
    }
    let mut params = ParamStore::new();
    let mut modules = Vec::new();
    let graph = match spec.family {
        Family::MiniCnn => {
            if h % 8 != 0 || w % 8 != 0 {
                return Err(Error::Shape(format!(
                    "mini_cnn needs H and W divisible by 8 (three stride-2 stages), got {}",
                    spec.input_shape
                )));
            }
            Graph::Cnn(CnnGraph::new(&mut params, &mut modules, &dims, spec))
        }
        Family::MiniVit => {
            if h % dims.patch != 0 || w % dims.patch != 0 {
                return Err(Error::Shape(format!(
                    "mini_vit needs H and W divisible by patch {}, got {}",
                    dims.patch, spec.input_shape
                )));
            }
            let depth = spec.effective_depth();
            if depth == 0 || depth > dims.depth {
                return Err(Error::Config(format!("depth {depth} outside 1..={}", dims.depth)));
            }
            Graph::Vit(VitGraph::new(&mut params, &mut modules, &dims, spec, depth))
        }
    };
    Ok(ProbeableNetwork { arch_id: spec.arch_id(), arch: spec.clone(), modules, params, graph })
}

impl ProbeableNetwork {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn arch_id(&self) -> &str {
        &self.arch_id
    }

    pub fn family(&self) -> Family {
        self.arch.family
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn modules(&self) -> &[ModuleInfo] {
        &self.modules
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn head_module(&self) -> &'static str {
        "head"
    }

    /// Patch size in pixels (ViT only).
    pub fn patch_size(&self) -> Option<usize> {
        match &self.graph {
            Graph::Vit(g) => Some(g.patch),
            Graph::Cnn(_) => None,
        }
    }

    /// Spatial token grid (ViT only).
    pub fn patch_grid(&self) -> Option<(usize, usize)> {
        match &self.graph {
            Graph::Vit(g) => Some((g.grid_h, g.grid_w)),
            Graph::Cnn(_) => None,
        }
    }

    pub fn depth(&self) -> usize {
        match &self.graph {
            Graph::Vit(g) => g.depth(),
            Graph::Cnn(g) => g.depth(),
        }
    }

    /// Learnable parameter count (buffers excluded).
    pub fn parameter_count(&self) -> usize {
        self.params.learnable_count()
    }

    /// Every tap id in forward order.
    pub fn tap_ids(&self) -> Vec<String> {
        match &self.graph {
            Graph::Cnn(g) => g.tap_ids(),
            Graph::Vit(g) => g.tap_ids(),
        }
    }

    fn check_input(&self, x: &Fmap) -> Result<()> {
        let s = self.arch.input_shape;
        if x.c != s.c || x.h != s.h || x.w != s.w {
            return Err(Error::Shape(format!(
                "input {}x{}x{} does not match network input {s}",
                x.h, x.w, x.c
            )));
        }
        if x.data.len() != x.n * x.per_sample() {
            return Err(Error::Shape("input buffer length disagrees with its shape".into()));
        }
        Ok(())
    }

    /// Inference-mode logits, `[n, num_classes]`.
    pub fn forward(&self, x: &Fmap) -> Result<Vec<f32>> {
        self.check_input(x)?;
        Ok(self.forward_eval(x, &mut TapSink::none(), None))
    }

    fn forward_eval(&self, x: &Fmap, sink: &mut TapSink<'_>, attn: Option<&mut Vec<AttentionMap>>) -> Vec<f32> {
        match &self.graph {
            Graph::Cnn(g) => g.forward_eval(&self.params, x, sink),
            Graph::Vit(g) => g.forward_eval(&self.params, x, sink, attn),
        }
    }

    /// Inference forward that also returns the requested tap activations.
    pub fn forward_with_taps(&self, batch: &InputBatch, tap_ids: &[&str]) -> Result<(Vec<f32>, Vec<ActivationBatch>)> {
        self.check_input(&batch.images)?;
        if batch.sample_ids.len() != batch.images.n {
            return Err(Error::Shape(format!(
                "{} sample ids for a batch of {}",
                batch.sample_ids.len(),
                batch.images.n
            )));
        }
        let known = self.tap_ids();
        for t in tap_ids {
            if !known.iter().any(|k| k == t) {
                return Err(Error::Lookup(format!("unknown tap `{t}` on {}", self.arch_id)));
            }
        }
        let mut sink = TapSink::new(tap_ids);
        let logits = self.forward_eval(&batch.images, &mut sink, None);
        let n = batch.images.n;
        let acts = sink
            .got
            .into_iter()
            .map(|(tap_id, layout, values)| {
                debug_assert_eq!(values.len(), n * layout.per_sample());
                ActivationBatch { tap_id, layout, values, sample_ids: batch.sample_ids.clone() }
            })
            .collect();
        Ok((logits, acts))
    }

    /// Per-block softmax attention weights (ViT only).
    pub fn attention_maps(&self, x: &Fmap) -> Result<Vec<AttentionMap>> {
        self.check_input(x)?;
        match &self.graph {
            Graph::Cnn(_) => Err(Error::Unsupported("attention maps require a mini_vit".into())),
            Graph::Vit(_) => {
                let mut maps = Vec::new();
                self.forward_eval(x, &mut TapSink::none(), Some(&mut maps));
                Ok(maps)
            }
        }
    }

    /// Training-mode forward (batch statistics, running-stat updates).
    pub fn forward_train(&mut self, x: &Fmap) -> Result<(Vec<f32>, Tape)> {
        self.check_input(x)?;
        let Self { graph, params, .. } = self;
        Ok(match graph {
            Graph::Cnn(g) => {
                let (logits, tape) = g.forward_train(params, x);
                (logits, Tape(TapeInner::Cnn(tape)))
            }
            Graph::Vit(g) => {
                let (logits, tape) = g.forward_train(params, x);
                (logits, Tape(TapeInner::Vit(tape)))
            }
        })
    }

    /// Accumulates parameter gradients of the loss whose logit gradient is `dlogits`.
    pub fn backward(&self, tape: &Tape, dlogits: &[f32], grads: &mut Grads) {
        match (&self.graph, &tape.0) {
            (Graph::Cnn(g), TapeInner::Cnn(t)) => g.backward(&self.params, t, dlogits, grads),
            (Graph::Vit(g), TapeInner::Vit(t)) => g.backward(&self.params, t, dlogits, grads),
            _ => panic!("tape does not belong to this network"),
        }
    }
}

/// Extracts the requested taps from one input batch without touching the
/// network's parameters.
pub fn capture_activations(network: &ProbeableNetwork, batch: &InputBatch, tap_ids: &[&str]) -> Result<Vec<ActivationBatch>> {
    network.forward_with_taps(batch, tap_ids).map(|(_, acts)| acts)
}

/// New ViT keeping the patchifier and the first `n_blocks` transformer blocks
/// of `network`; the final norm and head are freshly initialized.
pub fn truncate(network: &ProbeableNetwork, n_blocks: usize) -> Result<ProbeableNetwork> {
    if network.family() != Family::MiniVit {
        return Err(Error::Unsupported(format!("truncate requires a mini_vit, got {}", network.arch_id)));
    }
    let total = network.depth();
    if n_blocks == 0 || n_blocks > total {
        return Err(Error::Config(format!("n_blocks {n_blocks} outside 1..={total}")));
    }
    let mut spec = network.arch.clone();
    spec.depth = Some(n_blocks);
    let mut out = build_model(&spec)?;
    let keep: HashSet<String> = std::iter::once("patchifier".to_string())
        .chain((1..=n_blocks).flat_map(|b| [format!("block{b}.attn"), format!("block{b}.mlp")]))
        .collect();
    for entry in out.params.entries_mut() {
        if keep.contains(&entry.module) {
            let src = network
                .params
                .by_name(&entry.name)
                .ok_or_else(|| Error::Compatibility(format!("source lacks {}", entry.name)))?;
            entry.value.copy_from_slice(&src.value);
        }
    }
    Ok(out)
}

use crate::nn::layers::{gelu, gelu_backward, AttnCache, LayerNorm, Linear, LnCache, SelfAttention};
use crate::nn::{Fmap, Grads, ParamId, ParamStore, TensorRole};

use super::{ArchSpec, AttentionMap, FamilyDims, Layout, ModuleInfo, ModuleKind, TapSink};

/// Linear patch embedding plus cls token and learned positional embedding.
/// Positional embeddings are owned by the patchifier module.
#[derive(Clone, Debug)]
struct Patchifier {
    proj: Linear,
    cls: ParamId,
    pos: ParamId,
}

#[derive(Clone, Debug)]
struct Block {
    norm1: LayerNorm,
    attn: SelfAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

struct BlockTape {
    n1: LnCache,
    attn: AttnCache,
    attn_w: Vec<f32>,
    n2: LnCache,
    h2: Vec<f32>,
    u: Vec<f32>,
    g: Vec<f32>,
}

pub(crate) struct VitTape {
    patches: Vec<f32>,
    blocks: Vec<BlockTape>,
    final_ln: LnCache,
    cls_rows: Vec<f32>,
}

#[derive(Clone, Debug)]
pub(crate) struct VitGraph {
    patchifier: Patchifier,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    head: Linear,
    pub(crate) patch: usize,
    pub(crate) grid_h: usize,
    pub(crate) grid_w: usize,
    dim: usize,
    channels: usize,
}

impl VitGraph {
    pub(crate) fn new(
        ps: &mut ParamStore,
        modules: &mut Vec<ModuleInfo>,
        dims: &FamilyDims,
        spec: &ArchSpec,
        depth: usize,
    ) -> Self {
        let d = dims.widths[0];
        let p = dims.patch;
        let c = spec.input_shape.c;
        let (gh, gw) = (spec.input_shape.h / p, spec.input_shape.w / p);
        let tokens = gh * gw + 1;
        let patchifier = Patchifier {
            proj: Linear::new(ps, "patchifier.proj", "patchifier", c * p * p, d),
            cls: ps.add("patchifier.cls_token", "patchifier", &[1, d], TensorRole::Embedding, 0),
            pos: ps.add("patchifier.pos_embed", "patchifier", &[tokens, d], TensorRole::Embedding, 0),
        };
        modules.push(ModuleInfo { id: "patchifier".into(), kind: ModuleKind::Patchifier });
        let mut blocks = Vec::new();
        for b in 1..=depth {
            let am = format!("block{b}.attn");
            let mm = format!("block{b}.mlp");
            blocks.push(Block {
                norm1: LayerNorm::new(ps, &format!("block{b}.norm1"), &am, d),
                attn: SelfAttention::new(ps, &format!("block{b}.attn"), &am, d, dims.heads),
                norm2: LayerNorm::new(ps, &format!("block{b}.norm2"), &mm, d),
                fc1: Linear::new(ps, &format!("block{b}.mlp.fc1"), &mm, d, d * dims.mlp_ratio),
                fc2: Linear::new(ps, &format!("block{b}.mlp.fc2"), &mm, d * dims.mlp_ratio, d),
            });
            modules.push(ModuleInfo { id: am, kind: ModuleKind::Attention });
            modules.push(ModuleInfo { id: mm, kind: ModuleKind::Mlp });
        }
        let final_norm = LayerNorm::new(ps, "final_norm", "final_norm", d);
        modules.push(ModuleInfo { id: "final_norm".into(), kind: ModuleKind::Norm });
        let head = Linear::new(ps, "head", "head", d, spec.num_classes);
        modules.push(ModuleInfo { id: "head".into(), kind: ModuleKind::Head });
        Self { patchifier, blocks, final_norm, head, patch: p, grid_h: gh, grid_w: gw, dim: d, channels: c }
    }

    fn tokens(&self) -> usize {
        self.grid_h * self.grid_w + 1
    }

    pub(crate) fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub(crate) fn tap_ids(&self) -> Vec<String> {
        let mut t = vec!["patchifier".to_string()];
        for b in 1..=self.blocks.len() {
            t.push(format!("block{b}.attn"));
            t.push(format!("block{b}"));
        }
        t.push("final_norm".into());
        t
    }

    fn layout(&self) -> Layout {
        Layout::TokenSeq { tokens: self.tokens(), dim: self.dim, cls_index: Some(0) }
    }

    /// `[n * grid_h * grid_w, c * p * p]` patch rows, channel-major within a patch.
    fn extract_patches(&self, x: &Fmap) -> Vec<f32> {
        let p = self.patch;
        let per = self.channels * p * p;
        let np = self.grid_h * self.grid_w;
        let mut out = vec![0.0; x.n * np * per];
        for b in 0..x.n {
            for gy in 0..self.grid_h {
                for gx in 0..self.grid_w {
                    let row = &mut out[((b * np) + gy * self.grid_w + gx) * per..][..per];
                    let mut k = 0;
                    for c in 0..self.channels {
                        for py in 0..p {
                            let src = ((b * x.c + c) * x.h + gy * p + py) * x.w + gx * p;
                            row[k..k + p].copy_from_slice(&x.data[src..src + p]);
                            k += p;
                        }
                    }
                }
            }
        }
        out
    }

    fn embed(&self, ps: &ParamStore, x: &Fmap) -> (Vec<f32>, Vec<f32>) {
        let patches = self.extract_patches(x);
        let np = self.grid_h * self.grid_w;
        let d = self.dim;
        let t = self.tokens();
        let emb = self.patchifier.proj.forward(ps, &patches, x.n * np);
        let cls = ps.get(self.patchifier.cls);
        let pos = ps.get(self.patchifier.pos);
        let mut tokens = vec![0.0; x.n * t * d];
        for b in 0..x.n {
            let dst = &mut tokens[b * t * d..(b + 1) * t * d];
            dst[..d].copy_from_slice(cls);
            dst[d..].copy_from_slice(&emb[b * np * d..(b + 1) * np * d]);
            dst.iter_mut().zip(pos).for_each(|(v, p)| *v += p);
        }
        (tokens, patches)
    }

    fn cls_rows(&self, y: &[f32], n: usize) -> Vec<f32> {
        let (t, d) = (self.tokens(), self.dim);
        (0..n).flat_map(|b| y[b * t * d..b * t * d + d].iter().copied()).collect()
    }

    pub(crate) fn forward_eval(
        &self,
        ps: &ParamStore,
        x: &Fmap,
        sink: &mut TapSink<'_>,
        mut attn_out: Option<&mut Vec<AttentionMap>>,
    ) -> Vec<f32> {
        let n = x.n;
        let t = self.tokens();
        let layout = self.layout();
        let (mut h, _) = self.embed(ps, x);
        sink.offer("patchifier", layout, &h);
        for (i, blk) in self.blocks.iter().enumerate() {
            let (a_in, _) = blk.norm1.forward(ps, &h, false);
            let a = blk.attn.forward(ps, &a_in, n, t, false);
            h.iter_mut().zip(&a.y).for_each(|(v, u)| *v += u);
            sink.offer(&format!("block{}.attn", i + 1), layout, &h);
            if let Some(maps) = attn_out.as_deref_mut() {
                maps.push(AttentionMap {
                    layer_id: format!("block{}", i + 1),
                    batch: n,
                    heads: blk.attn.heads,
                    tokens: t,
                    cls_index: Some(0),
                    values: a.attn,
                });
            }
            let (h2, _) = blk.norm2.forward(ps, &h, false);
            let u = blk.fc1.forward(ps, &h2, n * t);
            let m = blk.fc2.forward(ps, &gelu(&u), n * t);
            h.iter_mut().zip(&m).for_each(|(v, u)| *v += u);
            sink.offer(&format!("block{}", i + 1), layout, &h);
        }
        let (y, _) = self.final_norm.forward(ps, &h, false);
        sink.offer("final_norm", layout, &y);
        self.head.forward(ps, &self.cls_rows(&y, n), n)
    }

    pub(crate) fn forward_train(&self, ps: &mut ParamStore, x: &Fmap) -> (Vec<f32>, VitTape) {
        let ps: &ParamStore = ps;
        let n = x.n;
        let t = self.tokens();
        let (mut h, patches) = self.embed(ps, x);
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (a_in, n1) = blk.norm1.forward(ps, &h, true);
            let a = blk.attn.forward(ps, &a_in, n, t, true);
            h.iter_mut().zip(&a.y).for_each(|(v, u)| *v += u);
            let (h2, n2) = blk.norm2.forward(ps, &h, true);
            let u = blk.fc1.forward(ps, &h2, n * t);
            let g = gelu(&u);
            let m = blk.fc2.forward(ps, &g, n * t);
            h.iter_mut().zip(&m).for_each(|(v, w)| *v += w);
            tapes.push(BlockTape {
                n1: n1.expect("cache"),
                attn: a.cache.expect("cache"),
                attn_w: a.attn,
                n2: n2.expect("cache"),
                h2,
                u,
                g,
            });
        }
        let (y, final_ln) = self.final_norm.forward(ps, &h, true);
        let cls_rows = self.cls_rows(&y, n);
        let logits = self.head.forward(ps, &cls_rows, n);
        (logits, VitTape { patches, blocks: tapes, final_ln: final_ln.expect("cache"), cls_rows })
    }

    pub(crate) fn backward(&self, ps: &ParamStore, tape: &VitTape, dlogits: &[f32], grads: &mut Grads) {
        let n = tape.cls_rows.len() / self.dim;
        let (t, d) = (self.tokens(), self.dim);
        let dcls = self.head.backward(ps, &tape.cls_rows, dlogits, n, grads, true).expect("dx");
        let mut dy = vec![0.0; n * t * d];
        for b in 0..n {
            dy[b * t * d..b * t * d + d].copy_from_slice(&dcls[b * d..(b + 1) * d]);
        }
        let mut dh = self.final_norm.backward(ps, &tape.final_ln, &dy, grads);
        for (blk, bt) in self.blocks.iter().zip(&tape.blocks).rev() {
            let mut dg = blk.fc2.backward(ps, &bt.g, &dh, n * t, grads, true).expect("dx");
            gelu_backward(&bt.u, &mut dg);
            let dh2 = blk.fc1.backward(ps, &bt.h2, &dg, n * t, grads, true).expect("dx");
            let dn2 = blk.norm2.backward(ps, &bt.n2, &dh2, grads);
            dh.iter_mut().zip(&dn2).for_each(|(a, b)| *a += b);
            let da = blk.attn.backward(ps, &bt.attn, &bt.attn_w, &dh, n, t, grads);
            let dn1 = blk.norm1.backward(ps, &bt.n1, &da, grads);
            dh.iter_mut().zip(&dn1).for_each(|(a, b)| *a += b);
        }
        {
            let gpos = grads.get_mut(self.patchifier.pos);
            for b in 0..n {
                gpos.iter_mut().zip(&dh[b * t * d..(b + 1) * t * d]).for_each(|(g, v)| *g += v);
            }
        }
        {
            let gcls = grads.get_mut(self.patchifier.cls);
            for b in 0..n {
                gcls.iter_mut().zip(&dh[b * t * d..b * t * d + d]).for_each(|(g, v)| *g += v);
            }
        }
        let np = t - 1;
        let mut demb = vec![0.0; n * np * d];
        for b in 0..n {
            demb[b * np * d..(b + 1) * np * d].copy_from_slice(&dh[(b * t + 1) * d..(b + 1) * t * d]);
        }
        self.patchifier.proj.backward(ps, &tape.patches, &demb, n * np, grads, false);
    }
}

use crate::nn::layers::{relu_backward, relu_inplace, BatchNorm2d, BnCache, Conv2d, ConvCache, Linear};
use crate::nn::{Fmap, Grads, ParamStore};

use super::{ArchSpec, FamilyDims, Layout, ModuleInfo, ModuleKind, TapSink};

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    down: Option<(Conv2d, BatchNorm2d)>,
}

pub(crate) struct BlockTape {
    c1: ConvCache,
    b1: BnCache,
    a1: Fmap,
    c2: ConvCache,
    b2: BnCache,
    down: Option<(ConvCache, BnCache)>,
    out: Fmap,
}

impl BasicBlock {
    fn new(ps: &mut ParamStore, module: &str, cin: usize, cout: usize, stride: usize) -> Self {
        let down = (stride != 1 || cin != cout).then(|| {
            (
                Conv2d::new(ps, &format!("{module}.down.conv"), module, cin, cout, 1, stride, 0, false),
                BatchNorm2d::new(ps, &format!("{module}.down.bn"), module, cout),
            )
        });
        Self {
            conv1: Conv2d::new(ps, &format!("{module}.conv1"), module, cin, cout, 3, stride, 1, false),
            bn1: BatchNorm2d::new(ps, &format!("{module}.bn1"), module, cout),
            conv2: Conv2d::new(ps, &format!("{module}.conv2"), module, cout, cout, 3, 1, 1, false),
            bn2: BatchNorm2d::new(ps, &format!("{module}.bn2"), module, cout),
            down,
        }
    }

    fn forward_eval(&self, ps: &ParamStore, x: &Fmap) -> Fmap {
        let (h, _) = self.conv1.forward(ps, x, false);
        let mut h = self.bn1.forward_eval(ps, &h);
        relu_inplace(&mut h.data);
        let (h, _) = self.conv2.forward(ps, &h, false);
        let mut out = self.bn2.forward_eval(ps, &h);
        match &self.down {
            Some((conv, bn)) => {
                let s = bn.forward_eval(ps, &conv.forward(ps, x, false).0);
                out.data.iter_mut().zip(&s.data).for_each(|(o, v)| *o += v);
            }
            None => out.data.iter_mut().zip(&x.data).for_each(|(o, v)| *o += v),
        }
        relu_inplace(&mut out.data);
        out
    }

    fn forward_train(&self, ps: &mut ParamStore, x: &Fmap) -> (Fmap, BlockTape) {
        let (h, c1) = self.conv1.forward(ps, x, true);
        let (mut a1, b1) = self.bn1.forward_train(ps, &h);
        relu_inplace(&mut a1.data);
        let (h, c2) = self.conv2.forward(ps, &a1, true);
        let (mut out, b2) = self.bn2.forward_train(ps, &h);
        let down = match &self.down {
            Some((conv, bn)) => {
                let (s, cc) = conv.forward(ps, x, true);
                let (s, bc) = bn.forward_train(ps, &s);
                out.data.iter_mut().zip(&s.data).for_each(|(o, v)| *o += v);
                Some((cc.expect("cache"), bc))
            }
            None => {
                out.data.iter_mut().zip(&x.data).for_each(|(o, v)| *o += v);
                None
            }
        };
        relu_inplace(&mut out.data);
        let tape = BlockTape {
            c1: c1.expect("cache"),
            b1,
            a1,
            c2: c2.expect("cache"),
            b2,
            down,
            out: out.clone(),
        };
        (out, tape)
    }

    fn backward(&self, ps: &ParamStore, t: &BlockTape, mut dy: Fmap, grads: &mut Grads) -> Fmap {
        relu_backward(&t.out.data, &mut dy.data);
        let d = self.bn2.backward(ps, &t.b2, &dy, grads);
        let mut d = self.conv2.backward(ps, &t.c2, &d, grads, true).expect("dx");
        relu_backward(&t.a1.data, &mut d.data);
        let d = self.bn1.backward(ps, &t.b1, &d, grads);
        let mut dx = self.conv1.backward(ps, &t.c1, &d, grads, true).expect("dx");
        match (&self.down, &t.down) {
            (Some((conv, bn)), Some((cc, bc))) => {
                let ds = bn.backward(ps, bc, &dy, grads);
                let ds = conv.backward(ps, cc, &ds, grads, true).expect("dx");
                dx.data.iter_mut().zip(&ds.data).for_each(|(a, b)| *a += b);
            }
            _ => dx.data.iter_mut().zip(&dy.data).for_each(|(a, b)| *a += b),
        }
        dx
    }
}

/// Stem conv + norm, four residual stages of two basic blocks, pooled linear head.
#[derive(Clone, Debug)]
pub(crate) struct CnnGraph {
    stem_conv: Conv2d,
    stem_norm: BatchNorm2d,
    stages: Vec<Vec<BasicBlock>>,
    head: Linear,
}

pub(crate) struct CnnTape {
    stem: ConvCache,
    stem_bn: BnCache,
    stem_out: Fmap,
    blocks: Vec<BlockTape>,
    pooled: Vec<f32>,
    final_shape: (usize, usize, usize, usize),
}

const BLOCKS_PER_STAGE: usize = 2;

impl CnnGraph {
    pub(crate) fn new(ps: &mut ParamStore, modules: &mut Vec<ModuleInfo>, dims: &FamilyDims, spec: &ArchSpec) -> Self {
        let w = dims.widths;
        let c = spec.input_shape.c;
        let stem_conv = Conv2d::new(ps, "stem_conv", "stem_conv", c, w[0], 3, 1, 1, false);
        modules.push(ModuleInfo { id: "stem_conv".into(), kind: ModuleKind::Stem });
        let stem_norm = BatchNorm2d::new(ps, "stem_norm", "stem_norm", w[0]);
        modules.push(ModuleInfo { id: "stem_norm".into(), kind: ModuleKind::Norm });
        let mut stages = Vec::new();
        let mut cin = w[0];
        for (s, &cout) in w.iter().enumerate() {
            let mut blocks = Vec::new();
            for b in 0..BLOCKS_PER_STAGE {
                let module = format!("stage{}.block{}", s + 1, b + 1);
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(ps, &module, cin, cout, stride));
                modules.push(ModuleInfo { id: module, kind: ModuleKind::ResidualBlock });
                cin = cout;
            }
            stages.push(blocks);
        }
        let head = Linear::new(ps, "head", "head", cin, spec.num_classes);
        modules.push(ModuleInfo { id: "head".into(), kind: ModuleKind::Head });
        Self { stem_conv, stem_norm, stages, head }
    }

    pub(crate) fn depth(&self) -> usize {
        self.stages.len()
    }

    pub(crate) fn tap_ids(&self) -> Vec<String> {
        let mut t = vec!["stem_conv".to_string(), "stem_norm".to_string()];
        t.extend((1..=self.stages.len()).map(|s| format!("stage{s}")));
        t
    }

    fn offer(sink: &mut TapSink<'_>, id: &str, x: &Fmap) {
        sink.offer(id, Layout::SpatialMap { c: x.c, h: x.h, w: x.w }, &x.data);
    }

    fn pool(x: &Fmap) -> Vec<f32> {
        let hw = x.h * x.w;
        x.data.chunks(hw).map(|c| c.iter().sum::<f32>() / hw as f32).collect()
    }

    pub(crate) fn forward_eval(&self, ps: &ParamStore, x: &Fmap, sink: &mut TapSink<'_>) -> Vec<f32> {
        let (h, _) = self.stem_conv.forward(ps, x, false);
        Self::offer(sink, "stem_conv", &h);
        let mut h = self.stem_norm.forward_eval(ps, &h);
        relu_inplace(&mut h.data);
        Self::offer(sink, "stem_norm", &h);
        for (s, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                h = b.forward_eval(ps, &h);
            }
            Self::offer(sink, &format!("stage{}", s + 1), &h);
        }
        let pooled = Self::pool(&h);
        self.head.forward(ps, &pooled, x.n)
    }

    pub(crate) fn forward_train(&self, ps: &mut ParamStore, x: &Fmap) -> (Vec<f32>, CnnTape) {
        let (h, stem) = self.stem_conv.forward(ps, x, true);
        let (mut h, stem_bn) = self.stem_norm.forward_train(ps, &h);
        relu_inplace(&mut h.data);
        let stem_out = h.clone();
        let mut blocks = Vec::new();
        for stage in &self.stages {
            for b in stage {
                let (o, t) = b.forward_train(ps, &h);
                blocks.push(t);
                h = o;
            }
        }
        let pooled = Self::pool(&h);
        let logits = self.head.forward(ps, &pooled, x.n);
        let tape = CnnTape {
            stem: stem.expect("cache"),
            stem_bn,
            stem_out,
            blocks,
            pooled,
            final_shape: (h.n, h.c, h.h, h.w),
        };
        (logits, tape)
    }

    pub(crate) fn backward(&self, ps: &ParamStore, t: &CnnTape, dlogits: &[f32], grads: &mut Grads) {
        let (n, c, hh, ww) = t.final_shape;
        let dpool = self.head.backward(ps, &t.pooled, dlogits, n, grads, true).expect("dx");
        let hw = hh * ww;
        let mut d = Fmap::zeros(n, c, hh, ww);
        for (chunk, g) in d.data.chunks_mut(hw).zip(&dpool) {
            chunk.iter_mut().for_each(|v| *v = g / hw as f32);
        }
        let all: Vec<&BasicBlock> = self.stages.iter().flatten().collect();
        for (b, bt) in all.iter().zip(&t.blocks).rev() {
            d = b.backward(ps, bt, d, grads);
        }
        relu_backward(&t.stem_out.data, &mut d.data);
        let d = self.stem_norm.backward(ps, &t.stem_bn, &d, grads);
        self.stem_conv.backward(ps, &t.stem, &d, grads, false);
    }
}

//! Layers with explicit forward/backward passes.
//!
//! Every layer is immutable configuration plus [`ParamId`] handles; parameter
//! values live in a [`ParamStore`] and gradients in a [`Grads`]. Training
//! forwards return caches that the matching backward consumes.

use super::gemm::{gemm, matmul, View};
use super::params::{Grads, ParamId, ParamStore, TensorRole};

/// Batch of feature maps, NCHW.
#[derive(Clone, Debug, PartialEq)]
pub struct Fmap {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Fmap {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn per_sample(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Batch of token sequences, stored as `[n * t, d]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokens {
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub data: Vec<f32>,
}

impl Tokens {
    pub fn rows(&self) -> usize {
        self.n * self.t
    }
}

// ---------------------------------------------------------------------------
// Convolution

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
pub struct ConvCache {
    cols: Vec<f32>,
    h: usize,
    w: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        module: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let fan_in = cin * k * k;
        let weight = store.add(format!("{name}.weight"), module, &[cout, cin, k, k], TensorRole::Weight, fan_in);
        let bias = bias.then(|| store.add(format!("{name}.bias"), module, &[cout], TensorRole::Bias, 0));
        Self { weight, bias, cin, cout, k, stride, pad }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, cols: &mut [f32]) {
        let (oh, ow) = self.out_size(h, w);
        let (k, s, p) = (self.k, self.stride as isize, self.pad as isize);
        let ohw = oh * ow;
        for ci in 0..self.cin {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = oy as isize * s + ki as isize - p;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            line.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = ox as isize * s + kj as isize - p;
                            *v = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, dx: &mut [f32]) {
        let (oh, ow) = self.out_size(h, w);
        let (k, s, p) = (self.k, self.stride as isize, self.pad as isize);
        let ohw = oh * ow;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = oy as isize * s + ki as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = iy as usize * w;
                        for ox in 0..ow {
                            let ix = ox as isize * s + kj as isize - p;
                            if ix >= 0 && ix < w as isize {
                                plane[base + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Fmap, keep: bool) -> (Fmap, Option<ConvCache>) {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (oh, ow) = self.out_size(x.h, x.w);
        let ckk = self.cin * self.k * self.k;
        let ohw = oh * ow;
        let wt = ps.get(self.weight);
        let mut out = Fmap::zeros(x.n, self.cout, oh, ow);
        let mut cols = vec![0.0; if keep { x.n * ckk * ohw } else { ckk * ohw }];
        for b in 0..x.n {
            let xb = &x.data[b * x.per_sample()..(b + 1) * x.per_sample()];
            let cb = if keep { &mut cols[b * ckk * ohw..(b + 1) * ckk * ohw] } else { &mut cols[..] };
            self.im2col(xb, x.h, x.w, cb);
            let ob = &mut out.data[b * self.cout * ohw..(b + 1) * self.cout * ohw];
            matmul(self.cout, ckk, ohw, wt, false, cb, false, ob, 0.0);
            if let Some(bias) = self.bias {
                let bv = ps.get(bias);
                for (co, chunk) in ob.chunks_mut(ohw).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bv[co]);
                }
            }
        }
        let cache = keep.then_some(ConvCache { cols, h: x.h, w: x.w });
        (out, cache)
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &ConvCache,
        dy: &Fmap,
        grads: &mut Grads,
        need_dx: bool,
    ) -> Option<Fmap> {
        let ckk = self.cin * self.k * self.k;
        let ohw = dy.h * dy.w;
        let wt = ps.get(self.weight);
        let mut dx = need_dx.then(|| Fmap::zeros(dy.n, self.cin, cache.h, cache.w));
        let mut dcols = vec![0.0; ckk * ohw];
        for b in 0..dy.n {
            let dyb = &dy.data[b * self.cout * ohw..(b + 1) * self.cout * ohw];
            let cb = &cache.cols[b * ckk * ohw..(b + 1) * ckk * ohw];
            matmul(self.cout, ohw, ckk, dyb, false, cb, true, grads.get_mut(self.weight), 1.0);
            if let Some(bias) = self.bias {
                let gb = grads.get_mut(bias);
                for (co, chunk) in dyb.chunks(ohw).enumerate() {
                    gb[co] += chunk.iter().sum::<f32>();
                }
            }
            if let Some(dx) = dx.as_mut() {
                matmul(ckk, self.cout, ohw, wt, true, dyb, false, &mut dcols, 0.0);
                let per = self.cin * cache.h * cache.w;
                self.col2im(&dcols, cache.h, cache.w, &mut dx.data[b * per..(b + 1) * per]);
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Batch normalization

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub c: usize,
    pub eps: f32,
    pub momentum: f32,
}

#[derive(Debug)]
pub struct BnCache {
    xhat: Vec<f32>,
    invstd: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, module: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.weight"), module, &[c], TensorRole::NormScale, 0),
            beta: store.add(format!("{name}.bias"), module, &[c], TensorRole::NormShift, 0),
            running_mean: store.add(format!("{name}.running_mean"), module, &[c], TensorRole::RunningMean, 0),
            running_var: store.add(format!("{name}.running_var"), module, &[c], TensorRole::RunningVar, 0),
            c,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward_eval(&self, ps: &ParamStore, x: &Fmap) -> Fmap {
        let hw = x.h * x.w;
        let (g, b) = (ps.get(self.gamma), ps.get(self.beta));
        let (rm, rv) = (ps.get(self.running_mean), ps.get(self.running_var));
        let mut out = x.clone();
        for (i, chunk) in out.data.chunks_mut(hw).enumerate() {
            let c = i % self.c;
            let inv = 1.0 / (rv[c] + self.eps).sqrt();
            let (scale, shift) = (g[c] * inv, b[c] - g[c] * inv * rm[c]);
            chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
        }
        out
    }

    pub fn forward_train(&self, ps: &mut ParamStore, x: &Fmap) -> (Fmap, BnCache) {
        let hw = x.h * x.w;
        let m = (x.n * hw) as f64;
        let mut mean = vec![0.0f64; self.c];
        let mut sq = vec![0.0f64; self.c];
        for (i, chunk) in x.data.chunks(hw).enumerate() {
            let c = i % self.c;
            for &v in chunk {
                mean[c] += v as f64;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for (i, chunk) in x.data.chunks(hw).enumerate() {
            let c = i % self.c;
            for &v in chunk {
                let d = v as f64 - mean[c];
                sq[c] += d * d;
            }
        }
        let var: Vec<f64> = sq.iter().map(|s| s / m).collect();
        let invstd: Vec<f32> = var.iter().map(|v| 1.0 / ((*v as f32) + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.data.len()];
        let mut out = Fmap::zeros(x.n, x.c, x.h, x.w);
        {
            let (g, b) = (ps.get(self.gamma), ps.get(self.beta));
            for (i, (xc, (hc, oc))) in x
                .data
                .chunks(hw)
                .zip(xhat.chunks_mut(hw).zip(out.data.chunks_mut(hw)))
                .enumerate()
            {
                let c = i % self.c;
                let mu = mean[c] as f32;
                for ((xv, hv), ov) in xc.iter().zip(hc.iter_mut()).zip(oc.iter_mut()) {
                    *hv = (xv - mu) * invstd[c];
                    *ov = g[c] * *hv + b[c];
                }
            }
        }
        let mom = self.momentum;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for (r, mu) in ps.get_mut(self.running_mean).iter_mut().zip(&mean) {
            *r = (1.0 - mom) * *r + mom * (*mu as f32);
        }
        for (r, v) in ps.get_mut(self.running_var).iter_mut().zip(&var) {
            *r = (1.0 - mom) * *r + mom * ((v * unbias) as f32);
        }
        (out, BnCache { xhat, invstd })
    }

    pub fn backward(&self, ps: &ParamStore, cache: &BnCache, dy: &Fmap, grads: &mut Grads) -> Fmap {
        let hw = dy.h * dy.w;
        let m = (dy.n * hw) as f32;
        let mut sdy = vec![0.0f32; self.c];
        let mut sdyx = vec![0.0f32; self.c];
        for (i, (dc, hc)) in dy.data.chunks(hw).zip(cache.xhat.chunks(hw)).enumerate() {
            let c = i % self.c;
            for (d, h) in dc.iter().zip(hc) {
                sdy[c] += d;
                sdyx[c] += d * h;
            }
        }
        {
            let gg = grads.get_mut(self.gamma);
            for c in 0..self.c {
                gg[c] += sdyx[c];
            }
        }
        {
            let gb = grads.get_mut(self.beta);
            for c in 0..self.c {
                gb[c] += sdy[c];
            }
        }
        let g = ps.get(self.gamma);
        let mut dx = Fmap::zeros(dy.n, dy.c, dy.h, dy.w);
        for (i, ((xc, dc), hc)) in dx
            .data
            .chunks_mut(hw)
            .zip(dy.data.chunks(hw))
            .zip(cache.xhat.chunks(hw))
            .enumerate()
        {
            let c = i % self.c;
            let k = g[c] * cache.invstd[c] / m;
            for ((xv, d), h) in xc.iter_mut().zip(dc).zip(hc) {
                *xv = k * (m * d - sdy[c] - h * sdyx[c]);
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Dense layers over rows

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, module: &str, inp: usize, out: usize) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), module, &[out, inp], TensorRole::Weight, inp),
            bias: store.add(format!("{name}.bias"), module, &[out], TensorRole::Bias, 0),
            inp,
            out,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &[f32], rows: usize) -> Vec<f32> {
        debug_assert_eq!(x.len(), rows * self.inp);
        let mut y = vec![0.0; rows * self.out];
        matmul(rows, self.inp, self.out, x, false, ps.get(self.weight), true, &mut y, 0.0);
        let b = ps.get(self.bias);
        for row in y.chunks_mut(self.out) {
            row.iter_mut().zip(b).for_each(|(v, bv)| *v += bv);
        }
        y
    }

    /// Accumulates weight/bias gradients; returns `dx` when requested.
    pub fn backward(
        &self,
        ps: &ParamStore,
        x: &[f32],
        dy: &[f32],
        rows: usize,
        grads: &mut Grads,
        need_dx: bool,
    ) -> Option<Vec<f32>> {
        matmul(self.out, rows, self.inp, dy, true, x, false, grads.get_mut(self.weight), 1.0);
        let gb = grads.get_mut(self.bias);
        for row in dy.chunks(self.out) {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        need_dx.then(|| {
            let mut dx = vec![0.0; rows * self.inp];
            matmul(rows, self.out, self.inp, dy, false, ps.get(self.weight), false, &mut dx, 0.0);
            dx
        })
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub d: usize,
    pub eps: f32,
}

#[derive(Debug)]
pub struct LnCache {
    xhat: Vec<f32>,
    invstd: Vec<f32>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, module: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.weight"), module, &[d], TensorRole::NormScale, 0),
            beta: store.add(format!("{name}.bias"), module, &[d], TensorRole::NormShift, 0),
            d,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &[f32], keep: bool) -> (Vec<f32>, Option<LnCache>) {
        let d = self.d;
        let rows = x.len() / d;
        let (g, b) = (ps.get(self.gamma), ps.get(self.beta));
        let mut y = vec![0.0; x.len()];
        let mut xhat = if keep { vec![0.0; x.len()] } else { Vec::new() };
        let mut invs = Vec::with_capacity(if keep { rows } else { 0 });
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let mean = xr.iter().sum::<f32>() / d as f32;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let inv = 1.0 / (var + self.eps).sqrt();
            let yr = &mut y[r * d..(r + 1) * d];
            for j in 0..d {
                let h = (xr[j] - mean) * inv;
                yr[j] = h * g[j] + b[j];
                if keep {
                    xhat[r * d + j] = h;
                }
            }
            if keep {
                invs.push(inv);
            }
        }
        (y, keep.then_some(LnCache { xhat, invstd: invs }))
    }

    pub fn backward(&self, ps: &ParamStore, cache: &LnCache, dy: &[f32], grads: &mut Grads) -> Vec<f32> {
        let d = self.d;
        let g = ps.get(self.gamma);
        {
            let gg = grads.get_mut(self.gamma);
            for (dr, hr) in dy.chunks(d).zip(cache.xhat.chunks(d)) {
                for j in 0..d {
                    gg[j] += dr[j] * hr[j];
                }
            }
        }
        {
            let gb = grads.get_mut(self.beta);
            for dr in dy.chunks(d) {
                gb.iter_mut().zip(dr).for_each(|(a, b)| *a += b);
            }
        }
        let mut dx = vec![0.0; dy.len()];
        for (r, ((xr, dr), hr)) in dx.chunks_mut(d).zip(dy.chunks(d)).zip(cache.xhat.chunks(d)).enumerate() {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for j in 0..d {
                let dh = dr[j] * g[j];
                s1 += dh;
                s2 += dh * hr[j];
            }
            let k = cache.invstd[r] / d as f32;
            for j in 0..d {
                let dh = dr[j] * g[j];
                xr[j] = k * (d as f32 * dh - s1 - hr[j] * s2);
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Multi-head self-attention

#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub d: usize,
}

#[derive(Debug)]
pub struct AttnCache {
    input: Vec<f32>,
    qkv: Vec<f32>,
    ctx: Vec<f32>,
}

/// Output of an attention forward: projected tokens plus `[n, heads, t, t]`
/// softmax weights.
pub struct AttnOut {
    pub y: Vec<f32>,
    pub attn: Vec<f32>,
    pub cache: Option<AttnCache>,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, module: &str, d: usize, heads: usize) -> Self {
        assert_eq!(d % heads, 0, "dim must divide into heads");
        Self {
            qkv: Linear::new(store, &format!("{name}.qkv"), module, d, 3 * d),
            proj: Linear::new(store, &format!("{name}.proj"), module, d, d),
            heads,
            d,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &[f32], n: usize, t: usize, keep: bool) -> AttnOut {
        let (d, h) = (self.d, self.heads);
        let dh = d / h;
        let scale = 1.0 / (dh as f32).sqrt();
        let qkv = self.qkv.forward(ps, x, n * t);
        let mut attn = vec![0.0; n * h * t * t];
        let mut ctx = vec![0.0; n * t * d];
        for b in 0..n {
            let base = b * t * 3 * d;
            for hd in 0..h {
                let a_off = (b * h + hd) * t * t;
                let a = &mut attn[a_off..a_off + t * t];
                gemm(
                    t,
                    dh,
                    t,
                    &qkv,
                    View::rows(base + hd * dh, 3 * d),
                    &qkv,
                    View::transposed(base + d + hd * dh, 3 * d),
                    a,
                    View::rows(0, t),
                    0.0,
                );
                for row in a.chunks_mut(t) {
                    let mx = row.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v * scale));
                    let mut s = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v * scale - mx).exp();
                        s += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= s);
                }
                gemm(
                    t,
                    t,
                    dh,
                    a,
                    View::rows(0, t),
                    &qkv,
                    View::rows(base + 2 * d + hd * dh, 3 * d),
                    &mut ctx,
                    View::rows(b * t * d + hd * dh, d),
                    0.0,
                );
            }
        }
        let y = self.proj.forward(ps, &ctx, n * t);
        let cache = keep.then(|| AttnCache { input: x.to_vec(), qkv, ctx });
        AttnOut { y, attn, cache }
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &AttnCache,
        attn: &[f32],
        dy: &[f32],
        n: usize,
        t: usize,
        grads: &mut Grads,
    ) -> Vec<f32> {
        let (d, h) = (self.d, self.heads);
        let dh = d / h;
        let scale = 1.0 / (dh as f32).sqrt();
        let dctx = self.proj.backward(ps, &cache.ctx, dy, n * t, grads, true).expect("dx");
        let mut dqkv = vec![0.0; n * t * 3 * d];
        let mut da = vec![0.0; t * t];
        for b in 0..n {
            let base = b * t * 3 * d;
            for hd in 0..h {
                let a = &attn[(b * h + hd) * t * t..(b * h + hd + 1) * t * t];
                let o_view = View::rows(b * t * d + hd * dh, d);
                // dA = dO · Vᵀ
                gemm(t, dh, t, &dctx, o_view, &cache.qkv, View::transposed(base + 2 * d + hd * dh, 3 * d), &mut da, View::rows(0, t), 0.0);
                // dV = Aᵀ · dO
                gemm(t, t, dh, a, View::transposed(0, t), &dctx, o_view, &mut dqkv, View::rows(base + 2 * d + hd * dh, 3 * d), 0.0);
                for (dr, ar) in da.chunks_mut(t).zip(a.chunks(t)) {
                    let dot: f32 = dr.iter().zip(ar).map(|(x, y)| x * y).sum();
                    for (dv, av) in dr.iter_mut().zip(ar) {
                        *dv = av * (*dv - dot) * scale;
                    }
                }
                // dQ = dS · K, dK = dSᵀ · Q
                gemm(t, t, dh, &da, View::rows(0, t), &cache.qkv, View::rows(base + d + hd * dh, 3 * d), &mut dqkv, View::rows(base + hd * dh, 3 * d), 0.0);
                gemm(t, t, dh, &da, View::transposed(0, t), &cache.qkv, View::rows(base + hd * dh, 3 * d), &mut dqkv, View::rows(base + d + hd * dh, 3 * d), 0.0);
            }
        }
        self.qkv.backward(ps, &cache.input, &dqkv, n * t, grads, true).expect("dx")
    }
}

// ---------------------------------------------------------------------------
// Pointwise

pub fn relu_inplace(x: &mut [f32]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `dy` by the positive entries of the ReLU output `y`.
pub fn relu_backward(y: &[f32], dy: &mut [f32]) {
    dy.iter_mut().zip(y).for_each(|(d, v)| {
        if *v <= 0.0 {
            *d = 0.0
        }
    });
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

pub fn gelu(x: &[f32]) -> Vec<f32> {
    x.iter()
        .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
        .collect()
}

pub fn gelu_backward(x: &[f32], dy: &mut [f32]) {
    for (d, &v) in dy.iter_mut().zip(x) {
        let u = GELU_C * (v + 0.044715 * v * v * v);
        let th = u.tanh();
        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
        *d *= 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
    }
}

/// Mean softmax cross-entropy; returns `(loss, dlogits)`.
pub fn softmax_cross_entropy(logits: &[f32], classes: usize, labels: &[usize]) -> (f32, Vec<f32>) {
    let n = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0f64;
    for (i, (row, g)) in logits.chunks(classes).zip(grad.chunks_mut(classes)).enumerate() {
        let mx = row.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v));
        let mut s = 0.0f32;
        for (gv, v) in g.iter_mut().zip(row) {
            *gv = (v - mx).exp();
            s += *gv;
        }
        loss += (s.ln() - (row[labels[i]] - mx)) as f64;
        for gv in g.iter_mut() {
            *gv /= s * n as f32;
        }
        g[labels[i]] -= 1.0 / n as f32;
    }
    ((loss / n as f64) as f32, grad)
}

pub fn softmax_rows(logits: &[f32], classes: usize) -> Vec<f32> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let mx = row.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v));
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

//! Finite-difference checks of every hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::*;
use super::params::{Grads, ParamId, ParamStore};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn fill_params(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for e in store.entries_mut() {
        if e.role.is_learnable() {
            e.value.iter_mut().for_each(|v| *v = rng.random_range(-0.5f32..0.5));
            if e.role == super::TensorRole::NormScale {
                e.value.iter_mut().for_each(|v| *v += 1.0);
            }
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// Compares analytic gradients of `loss = <f(x), r>` against central
/// differences, for the input and for every learnable parameter.
fn check<F>(store: &mut ParamStore, x: &mut [f32], r: &[f32], f: F, analytic: (Vec<f32>, Grads))
where
    F: Fn(&ParamStore, &[f32]) -> Vec<f32>,
{
    let eps = 1e-2f32;
    let (dx, grads) = analytic;
    let mut numeric = Vec::new();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let lp = dot(&f(store, x), r);
        x[i] = orig - eps;
        let lm = dot(&f(store, x), r);
        x[i] = orig;
        numeric.push((lp - lm) / (2.0 * eps as f64));
    }
    if !dx.is_empty() {
        let a: Vec<f64> = dx.iter().map(|v| *v as f64).collect();
        let e = rel_err(&a, &numeric);
        assert!(e < 2e-2, "input gradient rel err {e}");
    }
    for pid in 0..store.len() {
        if !store.entries()[pid].role.is_learnable() {
            continue;
        }
        let mut numeric = Vec::new();
        for j in 0..store.entries()[pid].numel() {
            let orig = store.get(ParamId(pid))[j];
            store.get_mut(ParamId(pid))[j] = orig + eps;
            let lp = dot(&f(store, x), r);
            store.get_mut(ParamId(pid))[j] = orig - eps;
            let lm = dot(&f(store, x), r);
            store.get_mut(ParamId(pid))[j] = orig;
            numeric.push((lp - lm) / (2.0 * eps as f64));
        }
        let a: Vec<f64> = grads.get(ParamId(pid)).iter().map(|v| *v as f64).collect();
        let e = rel_err(&a, &numeric);
        assert!(e < 2e-2, "param {} rel err {e}", store.entries()[pid].name);
    }
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, stride, pad, bias) in [(3, 1, 1, true), (3, 2, 1, false), (1, 2, 0, false)] {
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", "m", 2, 3, k, stride, pad, bias);
        fill_params(&mut store, &mut rng);
        let (n, h, w) = (2, 5, 4);
        let mut x = rand_vec(&mut rng, n * 2 * h * w);
        let mk = |d: &[f32]| Fmap { n, c: 2, h, w, data: d.to_vec() };
        let (y, cache) = conv.forward(&store, &mk(&x), true);
        let r = rand_vec(&mut rng, y.data.len());
        let mut grads = Grads::zeros(&store);
        let dy = Fmap { data: r.clone(), ..y };
        let dx = conv.backward(&store, &cache.unwrap(), &dy, &mut grads, true).unwrap();
        check(&mut store, &mut x, &r, |s, xs| conv.forward(s, &mk(xs), false).0.data, (dx.data, grads));
    }
}

#[test]
fn batchnorm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let bn = BatchNorm2d::new(&mut store, "bn", "m", 3);
    fill_params(&mut store, &mut rng);
    let (n, h, w) = (3, 2, 2);
    let mut x = rand_vec(&mut rng, n * 3 * h * w);
    let mk = |d: &[f32]| Fmap { n, c: 3, h, w, data: d.to_vec() };
    let mut s2 = store.clone();
    let (y, cache) = bn.forward_train(&mut s2, &mk(&x));
    let r = rand_vec(&mut rng, y.data.len());
    let mut grads = Grads::zeros(&store);
    let dx = bn.backward(&store, &cache, &Fmap { data: r.clone(), ..y }, &mut grads);
    check(
        &mut store,
        &mut x,
        &r,
        |s, xs| {
            let mut sc = s.clone();
            bn.forward_train(&mut sc, &mk(xs)).0.data
        },
        (dx.data, grads),
    );
}

#[test]
fn linear_and_layernorm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", "m", 4, 3);
    let ln = LayerNorm::new(&mut store, "ln", "m", 3);
    fill_params(&mut store, &mut rng);
    let rows = 5;
    let mut x = rand_vec(&mut rng, rows * 4);
    let fwd = |s: &ParamStore, xs: &[f32]| {
        let h = lin.forward(s, xs, rows);
        let g = gelu(&h);
        ln.forward(s, &g, false).0
    };
    let h = lin.forward(&store, &x, rows);
    let g = gelu(&h);
    let (y, cache) = ln.forward(&store, &g, true);
    let r = rand_vec(&mut rng, y.len());
    let mut grads = Grads::zeros(&store);
    let mut dg = ln.backward(&store, &cache.unwrap(), &r, &mut grads);
    gelu_backward(&h, &mut dg);
    let dx = lin.backward(&store, &x, &dg, rows, &mut grads, true).unwrap();
    check(&mut store, &mut x, &r, fwd, (dx, grads));
}

#[test]
fn attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let att = SelfAttention::new(&mut store, "a", "m", 4, 2);
    fill_params(&mut store, &mut rng);
    let (n, t) = (2, 3);
    let mut x = rand_vec(&mut rng, n * t * 4);
    let out = att.forward(&store, &x, n, t, true);
    let r = rand_vec(&mut rng, out.y.len());
    let mut grads = Grads::zeros(&store);
    let dx = att.backward(&store, out.cache.as_ref().unwrap(), &out.attn, &r, n, t, &mut grads);
    check(&mut store, &mut x, &r, |s, xs| att.forward(s, xs, n, t, false).y, (dx, grads));
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut logits = rand_vec(&mut rng, 12);
    let labels = [0usize, 2, 1];
    let (_, g) = softmax_cross_entropy(&logits, 4, &labels);
    let eps = 1e-2;
    for i in 0..logits.len() {
        let o = logits[i];
        logits[i] = o + eps;
        let lp = softmax_cross_entropy(&logits, 4, &labels).0;
        logits[i] = o - eps;
        let lm = softmax_cross_entropy(&logits, 4, &labels).0;
        logits[i] = o;
        assert!(((lp - lm) / (2.0 * eps) - g[i]).abs() < 1e-3);
    }
}

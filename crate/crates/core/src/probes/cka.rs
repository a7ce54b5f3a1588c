//! Linear CKA (exact and minibatch-accumulated with the unbiased HSIC estimator).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netlab::{capture_activations, ActivationBatch, InputBatch, ProbeableNetwork};

/// Row-major `n × p` matrix of f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub n: usize,
    pub p: usize,
    pub values: Vec<f64>,
}

impl Features {
    pub fn new(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * p {
            return Err(Error::Shape(format!("{} values for a {n}x{p} matrix", values.len())));
        }
        Ok(Self { n, p, values })
    }

    pub fn from_f32(n: usize, p: usize, values: &[f32]) -> Result<Self> {
        Self::new(n, p, values.iter().map(|v| *v as f64).collect())
    }

    pub fn from_activations(a: &ActivationBatch) -> Self {
        Self { n: a.batch(), p: a.layout.per_sample(), values: a.values.iter().map(|v| *v as f64).collect() }
    }

    fn centered(&self) -> Vec<f64> {
        let mut out = self.values.clone();
        for j in 0..self.p {
            let mean = (0..self.n).map(|i| self.values[i * self.p + j]).sum::<f64>() / self.n as f64;
            for i in 0..self.n {
                out[i * self.p + j] -= mean;
            }
        }
        out
    }
}

/// `C = Aᵀ B` for row-major `a: n×p`, `b: n×q`.
fn cross(a: &[f64], b: &[f64], n: usize, p: usize, q: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * q];
    // SAFETY: slice lengths are n*p, n*q and p*q, matching the strides below.
    unsafe {
        matrixmultiply::dgemm(
            p, n, q, 1.0,
            a.as_ptr(), 1, p as isize,
            b.as_ptr(), q as isize, 1,
            0.0, c.as_mut_ptr(), q as isize, 1,
        );
    }
    c
}

/// Gram matrix `X Xᵀ` of a row-major `n×p` matrix.
pub fn gram(x: &[f64], n: usize, p: usize) -> Vec<f64> {
    assert_eq!(x.len(), n * p);
    let mut g = vec![0.0; n * n];
    // SAFETY: x is n*p and g is n*n, as the strides require.
    unsafe {
        matrixmultiply::dgemm(
            n, p, n, 1.0,
            x.as_ptr(), p as isize, 1,
            x.as_ptr(), 1, p as isize,
            0.0, g.as_mut_ptr(), n as isize, 1,
        );
    }
    g
}

fn frob2(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn check_pair(x: &Features, y: &Features) -> Result<()> {
    if x.n != y.n {
        return Err(Error::Shape(format!("CKA inputs have {} and {} rows", x.n, y.n)));
    }
    if x.n < 2 {
        return Err(Error::Data("CKA needs at least two samples".into()));
    }
    if x.values.iter().chain(&y.values).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite activation".into()));
    }
    Ok(())
}

/// `‖Yᶜᵀ Xᶜ‖²_F / (‖Xᶜᵀ Xᶜ‖_F ‖Yᶜᵀ Yᶜ‖_F)` on column-centered inputs.
/// Evaluated in feature space or in sample space, whichever is smaller.
pub fn linear_cka(x: &Features, y: &Features) -> Result<f64> {
    check_pair(x, y)?;
    let xc = x.centered();
    let yc = y.centered();
    let (num, dx, dy) = if x.n < x.p.max(y.p) {
        let kx = gram(&xc, x.n, x.p);
        let ky = gram(&yc, y.n, y.p);
        let dot: f64 = kx.iter().zip(&ky).map(|(a, b)| a * b).sum();
        (dot, frob2(&kx).sqrt(), frob2(&ky).sqrt())
    } else {
        // Same operand order for (x, y) and (y, x) keeps the score exactly symmetric.
        let x_first = (x.p, &xc).partial_cmp(&(y.p, &yc)) != Some(std::cmp::Ordering::Greater);
        let yx = if x_first { cross(&xc, &yc, x.n, x.p, y.p) } else { cross(&yc, &xc, x.n, y.p, x.p) };
        let xx = cross(&xc, &xc, x.n, x.p, x.p);
        let yy = cross(&yc, &yc, x.n, y.p, y.p);
        (frob2(&yx), frob2(&xx).sqrt(), frob2(&yy).sqrt())
    };
    if dx == 0.0 || dy == 0.0 {
        return Err(Error::Degenerate("CKA input has zero variance".into()));
    }
    Ok((num / (dx * dy)).clamp(0.0, 1.0))
}

/// Unbiased HSIC₁ estimate of two `n×n` Gram matrices; diagonals are ignored.
pub fn hsic_unbiased(k: &[f64], l: &[f64], n: usize) -> Result<f64> {
    if n < 4 {
        return Err(Error::Estimator(format!("unbiased HSIC needs batch >= 4, got {n}")));
    }
    if k.len() != n * n || l.len() != n * n {
        return Err(Error::Shape("Gram matrices do not match the batch size".into()));
    }
    let at = |m: &[f64], i: usize, j: usize| if i == j { 0.0 } else { m[i * n + j] };
    let mut tr = 0.0;
    let mut sum_k = 0.0;
    let mut sum_l = 0.0;
    let mut kl_row = 0.0;
    let mut row_k = vec![0.0; n];
    let mut row_l = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (at(k, i, j), at(l, i, j));
            tr += a * b;
            row_k[i] += a;
            row_l[i] += b;
        }
        sum_k += row_k[i];
        sum_l += row_l[i];
    }
    // 1ᵀ K L 1 with symmetric K: Σ_j (K1)_j (L1)_j.
    for i in 0..n {
        kl_row += row_k[i] * row_l[i];
    }
    let nf = n as f64;
    Ok((tr + sum_k * sum_l / ((nf - 1.0) * (nf - 2.0)) - 2.0 * kl_row / (nf - 2.0)) / (nf * (nf - 3.0)))
}

/// Streams paired batches and accumulates HSIC terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinibatchCka {
    pub xy: f64,
    pub xx: f64,
    pub yy: f64,
    pub batches: usize,
    pub samples: usize,
}

impl MinibatchCka {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, x: &Features, y: &Features) -> Result<()> {
        check_pair(x, y)?;
        let k = gram(&x.values, x.n, x.p);
        let l = gram(&y.values, y.n, y.p);
        self.update_grams(&k, &l, x.n)
    }

    pub fn update_grams(&mut self, k: &[f64], l: &[f64], n: usize) -> Result<()> {
        self.xy += hsic_unbiased(k, l, n)?;
        self.xx += hsic_unbiased(k, k, n)?;
        self.yy += hsic_unbiased(l, l, n)?;
        self.batches += 1;
        self.samples += n;
        Ok(())
    }

    /// Checks that both sides carry the same samples before accumulating.
    pub fn update_paired(&mut self, a: &ActivationBatch, b: &ActivationBatch) -> Result<()> {
        if a.sample_ids != b.sample_ids {
            return Err(Error::Pairing(format!("sample ids differ between taps `{}` and `{}`", a.tap_id, b.tap_id)));
        }
        self.update(&Features::from_activations(a), &Features::from_activations(b))
    }

    pub fn value(&self) -> Result<f64> {
        if self.batches == 0 {
            return Err(Error::Data("no batches accumulated".into()));
        }
        let denom = (self.xx * self.yy).sqrt();
        if !(denom > 0.0) {
            return Err(Error::Degenerate("zero self-HSIC in minibatch CKA".into()));
        }
        Ok(self.xy / denom)
    }
}

/// Minibatch CKA over a stream of paired batches.
pub fn minibatch_cka<'a, I>(stream: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a ActivationBatch, &'a ActivationBatch)>,
{
    let mut acc = MinibatchCka::new();
    for (a, b) in stream {
        acc.update_paired(a, b)?;
    }
    acc.value()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Row-major `rows × cols`, clamped to `[0, 1]`.
    pub values: Vec<f64>,
    pub n_samples: usize,
    pub batch_size: usize,
    pub runs_averaged: usize,
}

impl CkaMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols.len() + c]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.len().min(self.cols.len())).map(|i| self.get(i, i)).collect()
    }

    pub fn off_diagonal_mean(&self) -> f64 {
        let mut s = 0.0;
        let mut k = 0;
        for r in 0..self.rows.len() {
            for c in 0..self.cols.len() {
                if r != c {
                    s += self.get(r, c);
                    k += 1;
                }
            }
        }
        if k == 0 { 0.0 } else { s / k as f64 }
    }
}

/// Batch boundaries of `batch_size`, folding a tail shorter than 4 into the previous batch.
pub fn estimator_batches(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let bs = batch_size.max(4);
    let mut out: Vec<(usize, usize)> = (0..n).step_by(bs).map(|s| (s, (s + bs).min(n))).collect();
    if out.len() > 1 {
        let (s, e) = *out.last().unwrap();
        if e - s < 4 {
            out.pop();
            out.last_mut().unwrap().1 = e;
        }
    }
    out
}

/// Tap-by-tap minibatch CKA between paired networks on a shared evaluation set,
/// averaged over the given pairs (one pair per seed).
pub fn cka_map(
    pairs: &[(&ProbeableNetwork, &ProbeableNetwork)],
    eval_set: &InputBatch,
    taps_a: &[&str],
    taps_b: &[&str],
    batch_size: usize,
) -> Result<CkaMatrix> {
    let n = eval_set.sample_ids.len();
    if n == 0 {
        return Err(Error::Data("empty evaluation set".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Config("cka_map needs at least one network pair".into()));
    }
    let batches = estimator_batches(n, batch_size);
    let (ra, cb) = (taps_a.len(), taps_b.len());
    let mut total = vec![0.0; ra * cb];
    let per = eval_set.images.per_sample();
    for (net_a, net_b) in pairs {
        let mut acc = vec![MinibatchCka::new(); ra * cb];
        for &(s, e) in &batches {
            let images = crate::nn::Fmap {
                n: e - s,
                c: eval_set.images.c,
                h: eval_set.images.h,
                w: eval_set.images.w,
                data: eval_set.images.data[s * per..e * per].to_vec(),
            };
            let batch = InputBatch { images, sample_ids: eval_set.sample_ids[s..e].to_vec() };
            let acts_a = capture_activations(net_a, &batch, taps_a)?;
            let acts_b = capture_activations(net_b, &batch, taps_b)?;
            let grams = |acts: &[ActivationBatch], taps: &[&str]| -> Result<Vec<Vec<f64>>> {
                taps.iter()
                    .map(|t| {
                        let a = acts.iter().find(|a| a.tap_id == *t).ok_or_else(|| Error::Lookup(format!("tap `{t}`")))?;
                        let f = Features::from_activations(a);
                        if f.values.iter().any(|v| !v.is_finite()) {
                            return Err(Error::Data(format!("non-finite activation at `{t}`")));
                        }
                        Ok(gram(&f.values, f.n, f.p))
                    })
                    .collect()
            };
            let ga = grams(&acts_a, taps_a)?;
            let gb = grams(&acts_b, taps_b)?;
            for i in 0..ra {
                for j in 0..cb {
                    acc[i * cb + j].update_grams(&ga[i], &gb[j], e - s)?;
                }
            }
        }
        for (t, a) in total.iter_mut().zip(&acc) {
            *t += a.value()?.clamp(0.0, 1.0);
        }
    }
    let k = pairs.len() as f64;
    Ok(CkaMatrix {
        rows: taps_a.iter().map(|s| s.to_string()).collect(),
        cols: taps_b.iter().map(|s| s.to_string()).collect(),
        values: total.into_iter().map(|v| v / k).collect(),
        n_samples: n,
        batch_size,
        runs_averaged: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(n: usize, p: usize, seed: u64) -> Features {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Features::new(n, p, (0..n * p).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    /// Direct Gram-matrix form: HSIC(K, L) = tr(K H L H) / (n-1)^2.
    fn hsic_gram_oracle(x: &Features, y: &Features) -> f64 {
        let n = x.n;
        let k = gram(&x.values, n, x.p);
        let l = gram(&y.values, n, y.p);
        let h = |i: usize, j: usize| if i == j { 1.0 - 1.0 / n as f64 } else { -1.0 / n as f64 };
        let center = |m: &[f64]| {
            let mut hm = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    hm[i * n + j] = (0..n).map(|t| h(i, t) * m[t * n + j]).sum();
                }
            }
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = (0..n).map(|t| hm[i * n + t] * h(t, j)).sum();
                }
            }
            out
        };
        let (kc, lc) = (center(&k), center(&l));
        let hsic = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        hsic(&kc, &lc) / (hsic(&kc, &kc) * hsic(&lc, &lc)).sqrt()
    }

    #[test]
    fn self_similarity_and_degenerate() {
        let x = randn(40, 7, 1);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let flat = Features::new(5, 2, vec![1.0; 10]).unwrap();
        assert!(matches!(linear_cka(&flat, &x.clone_rows(5)), Err(Error::Degenerate(_))));
    }

    impl Features {
        fn clone_rows(&self, n: usize) -> Features {
            Features::new(n, self.p, self.values[..n * self.p].to_vec()).unwrap()
        }
    }

    #[test]
    fn matches_gram_oracle_on_first_column() {
        let x = randn(64, 2, 11);
        let y = Features::new(64, 1, (0..64).map(|i| x.values[i * 2]).collect()).unwrap();
        let a = linear_cka(&x, &y).unwrap();
        let b = hsic_gram_oracle(&x, &y);
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn feature_and_sample_paths_agree() {
        let x = randn(30, 50, 2);
        let y = randn(30, 8, 3);
        // n < p triggers the Gram path; compare against the oracle.
        assert!((linear_cka(&x, &y).unwrap() - hsic_gram_oracle(&x, &y)).abs() < 1e-10);
        let x = randn(60, 5, 4);
        let y = randn(60, 3, 5);
        assert!((linear_cka(&x, &y).unwrap() - hsic_gram_oracle(&x, &y)).abs() < 1e-10);
    }

    #[test]
    fn estimator_requires_four_samples() {
        let x = randn(3, 2, 0);
        let mut acc = MinibatchCka::new();
        assert!(matches!(acc.update(&x, &x), Err(Error::Estimator(_))));
    }

    #[test]
    fn batch_plan_folds_short_tail() {
        assert_eq!(estimator_batches(258, 128), vec![(0, 128), (128, 258)]);
        assert_eq!(estimator_batches(300, 128), vec![(0, 128), (128, 256), (256, 300)]);
        assert_eq!(estimator_batches(3, 128), vec![(0, 3)]);
    }
}

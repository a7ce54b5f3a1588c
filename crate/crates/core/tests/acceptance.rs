//! Acceptance criteria 1–13: exact property suites and the desk-scale trend suite.
//!
//! Each criterion prints one `PASS`/`FAIL` line on stderr (bypassing the test
//! harness's output capture). Set `REUSELAB_SKIP_TREND=1` to skip the trend
//! suite during development; its results are cached under the cargo target dir.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use reuselab::data::{ingest_synthetic, GeneratorSpec};
use reuselab::harness::{load_runs, report, run_matrix, ExperimentConfig, ReportSpec, RunOptions};
use reuselab::initkit::{apply_scheme, build_wt_st, init_random, init_stats_transfer, mean_and_sigma, weight_stats, InitKind, InitScheme};
use reuselab::metrics::{self, fid, PredictionSet};
use reuselab::netlab::{
    build_model, load_checkpoint, partition_of, save_checkpoint, snapshot_weights, ArchSpec, AttentionMap, Capacity, Family,
    InputShape, ProbeableNetwork, SnapshotTag, WeightSnapshot,
};
use reuselab::probes::cka::gram;
use reuselab::probes::knn::cosine;
use reuselab::probes::{
    hsic_unbiased, knn_predict, l2_drift, linear_cka, mean_attended_distance_layer, reinit_robustness, Embeddings, Features, MinibatchCka,
};
use reuselab::trainbench::{evaluate, fine_tune, RunContext, RunRecord, TrainConfig};

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn announce(v: &Verdict) {
    let status = if v.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {:>2} {:<22} {status}  {}", v.id, v.name, v.detail);
}

fn conclude(verdicts: &[Verdict]) {
    let failed: Vec<String> = verdicts.iter().filter(|v| !v.pass).map(|v| format!("{} ({})", v.id, v.detail)).collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join("; "));
}

/// Collects failed checks for one criterion.
#[derive(Default)]
struct Checks(Vec<String>);

impl Checks {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.0.push(what());
        }
    }

    fn verdict(self, id: u8, name: &'static str, summary: String) -> Verdict {
        let pass = self.0.is_empty();
        let detail = if pass { summary } else { self.0.into_iter().take(3).collect::<Vec<_>>().join("; ") };
        Verdict { id, name, pass, detail }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(r: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(r)).collect()
}

fn matmul(x: &[f64], n: usize, p: usize, w: &[f64], q: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * q];
    for i in 0..n {
        for k in 0..p {
            let a = x[i * p + k];
            for j in 0..q {
                out[i * q + j] += a * w[k * q + j];
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// 1. CKA

fn criterion_cka() -> Verdict {
    let mut c = Checks::default();
    let mut r = rng(1);
    let mut worst_invariance = 0.0f64;
    for &(n, p, q) in &[(200usize, 40usize, 24usize), (30, 64, 48)] {
        let x = randn(&mut r, n * p);
        let w = randn(&mut r, p * q);
        let noise = randn(&mut r, n * q);
        let y: Vec<f64> = matmul(&x, n, p, &w, q).iter().zip(&noise).map(|(a, e)| a.tanh() + 0.5 * e).collect();
        let fx = Features::new(n, p, x.clone()).unwrap();
        let fy = Features::new(n, q, y.clone()).unwrap();
        let self_sim = linear_cka(&fx, &fx).unwrap();
        c.check((self_sim - 1.0).abs() <= 1e-6, || format!("self-similarity {self_sim} at n={n}"));
        let base = linear_cka(&fx, &fy).unwrap();
        let swapped = linear_cka(&fy, &fx).unwrap();
        c.check(base.to_bits() == swapped.to_bits(), || format!("asymmetric: {base} vs {swapped}"));
        let qr = DMatrix::<f64>::from_fn(p, p, |_, _| StandardNormal.sample(&mut r)).qr();
        let ortho = qr.q();
        let rot: Vec<f64> = (0..n * p).map(|k| (0..p).map(|m| x[(k / p) * p + m] * ortho[(m, k % p)]).sum::<f64>() * 3.7).collect();
        let moved = linear_cka(&Features::new(n, p, rot).unwrap(), &fy).unwrap();
        worst_invariance = worst_invariance.max((moved - base).abs());
        c.check((moved - base).abs() <= 1e-6, || format!("orthogonal/scale drift {} at n={n}", (moved - base).abs()));
    }
    // Minibatch estimate over batches of 128 at n = 512, on features driven by a
    // low-rank latent as network activations are.
    let (n, p, q, rank) = (512, 64, 48, 6);
    let z = randn(&mut r, n * rank);
    let latent = |r: &mut ChaCha8Rng, width: usize| -> Vec<f64> {
        let a = randn(r, rank * width);
        let e = randn(r, n * width);
        matmul(&z, n, rank, &a, width).iter().zip(&e).map(|(v, e)| v.tanh() + 0.5 * e).collect()
    };
    let x = latent(&mut r, p);
    let y = latent(&mut r, q);
    let batches = |x: &[f64], y: &[f64], p: usize, q: usize, order: &[usize]| {
        let mut acc = MinibatchCka::new();
        for &b in order {
            let xs = Features::new(128, p, x[b * 128 * p..(b + 1) * 128 * p].to_vec()).unwrap();
            let ys = Features::new(128, q, y[b * 128 * q..(b + 1) * 128 * q].to_vec()).unwrap();
            acc.update(&xs, &ys).unwrap();
        }
        acc.value().unwrap()
    };
    let full = linear_cka(&Features::new(n, p, x.clone()).unwrap(), &Features::new(n, q, y.clone()).unwrap()).unwrap();
    let mb = batches(&x, &y, p, q, &[0, 1, 2, 3]);
    let shuffled = batches(&x, &y, p, q, &[2, 0, 3, 1]);
    c.check((mb - full).abs() <= 0.01, || format!("minibatch {mb:.4} vs full {full:.4}"));
    c.check((mb - shuffled).abs() <= 1e-12, || format!("batch order changes minibatch CKA: {mb} vs {shuffled}"));

    // Isotropic features with dimension comparable to n: the full score carries the
    // plug-in estimator's upward bias, the minibatch score tracks unbiased HSIC.
    let (p, q) = (32, 24);
    let x = randn(&mut r, n * p);
    let w = randn(&mut r, p * q);
    let noise = randn(&mut r, n * q);
    let y: Vec<f64> = matmul(&x, n, p, &w, q).iter().zip(&noise).map(|(a, e)| a.tanh() + 0.8 * e).collect();
    let (kx, ky) = (gram(&x, n, p), gram(&y, n, q));
    let unbiased = hsic_unbiased(&kx, &ky, n).unwrap() / (hsic_unbiased(&kx, &kx, n).unwrap() * hsic_unbiased(&ky, &ky, n).unwrap()).sqrt();
    let iso_full = linear_cka(&Features::new(n, p, x.clone()).unwrap(), &Features::new(n, q, y.clone()).unwrap()).unwrap();
    let iso_mb = batches(&x, &y, p, q, &[0, 1, 2, 3]);
    c.check((iso_mb - unbiased).abs() <= 0.01, || format!("isotropic minibatch {iso_mb:.4} vs unbiased full {unbiased:.4}"));
    c.verdict(1, "cka", format!("invariance drift {worst_invariance:.1e}; minibatch {mb:.4} vs full {full:.4}; isotropic minibatch {iso_mb:.4}, unbiased {unbiased:.4}, plug-in {iso_full:.4}"))
}

// ---------------------------------------------------------------------------
// 2. Initializers

fn arch(family: Family, capacity: Capacity, size: usize, classes: usize, seed: u64) -> ArchSpec {
    ArchSpec::new(family, capacity, InputShape::new(size, size, 3), classes, seed)
}

/// A source snapshot whose tensors each have their own offset and spread.
fn fake_source(family: Family, capacity: Capacity) -> WeightSnapshot {
    let mut net = build_model(&arch(family, capacity, 32, 10, 99)).unwrap();
    let mut r = rng(7);
    for e in net.params_mut().entries_mut() {
        let shift: f32 = r.random_range(-0.5..0.5);
        let spread: f32 = r.random_range(0.05..0.3);
        for v in e.value.iter_mut() {
            *v = shift + spread * r.random_range(-1.0f32..1.0);
        }
    }
    snapshot_weights(&net, SnapshotTag::Pretrained).retagged(SnapshotTag::Pretrained, true)
}

fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn criterion_initializers() -> Verdict {
    let mut c = Checks::default();
    let mut checked_tensors = 0;
    for family in [Family::MiniCnn, Family::MiniVit] {
        let src = fake_source(family, Capacity::Small);
        let target = arch(family, Capacity::Small, 32, 5, 0);
        let mut st_net = build_model(&target).unwrap();
        init_stats_transfer(&mut st_net, &weight_stats(&src).unwrap(), 11).unwrap();
        let partition = partition_of(&st_net).unwrap();
        let g = partition.len();
        for n in 0..=g {
            let mut net = build_model(&target).unwrap();
            build_wt_st(&mut net, &src, n, 11).unwrap();
            for e in net.params().entries() {
                let Some(gi) = partition.group_of_module(&e.module) else { continue };
                let s = src.tensor(&e.name).unwrap();
                if gi < n {
                    c.check(same_bits(&e.value, &s.values), || format!("{family} depth {n}: {} not copied", e.name));
                } else {
                    let st = st_net.params().by_name(&e.name).unwrap();
                    c.check(same_bits(&e.value, &st.value), || format!("{family} depth {n}: {} differs from ST", e.name));
                }
            }
        }
        let stats = weight_stats(&src).unwrap();
        for e in st_net.params().entries().iter().filter(|e| e.module != "head" && e.role.is_learnable() && e.numel() >= 10_000) {
            let s = stats.get(&e.name).unwrap();
            let (mu, sd) = mean_and_sigma(&e.value);
            c.check((mu - s.mu).abs() <= 4.0 * s.sigma / (s.count as f64).sqrt(), || format!("{}: mean {mu} vs {}", e.name, s.mu));
            c.check((sd / s.sigma - 1.0).abs() <= 0.05, || format!("{}: sigma {sd} vs {}", e.name, s.sigma));
            checked_tensors += 1;
        }
        let weights = |kind: InitKind, n: Option<usize>| {
            let mut net = build_model(&target).unwrap();
            apply_scheme(&mut net, &InitScheme { kind, n, source_checkpoint: None, seed: 4 }, Some(&src)).unwrap();
            snapshot_weights(&net, SnapshotTag::Initial)
        };
        c.check(weights(InitKind::St, None).same_values(&weights(InitKind::WtSt, Some(0))), || format!("{family}: ST != WT-ST-0"));
        c.check(weights(InitKind::Wt, None).same_values(&weights(InitKind::WtSt, Some(g))), || format!("{family}: WT != WT-ST-{g}"));
    }
    c.check(checked_tensors > 0, || "no tensor reached 10^4 elements".into());
    c.verdict(2, "initializers", format!("prefix/suffix bitwise at every depth; {checked_tensors} large tensors within ST tolerances"))
}

// ---------------------------------------------------------------------------
// 3. k-NN

fn knn_oracle(train: &Embeddings, test: &Embeddings, k: usize, classes: usize) -> Vec<usize> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let k = k.min(train.len());
    (0..test.len())
        .map(|q| {
            let qr = test.row(q);
            let mut all: Vec<(f64, usize)> = (0..train.len()).map(|i| (cosine(qr, norm(qr), train.row(i), norm(train.row(i))), i)).collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut count = vec![0usize; classes];
            let mut mass = vec![0.0f64; classes];
            for &(s, i) in &all[..k] {
                count[train.labels[i]] += 1;
                mass[train.labels[i]] += s;
            }
            let mut order: Vec<usize> = (0..classes).collect();
            order.sort_by(|&a, &b| count[b].cmp(&count[a]).then(mass[b].partial_cmp(&mass[a]).unwrap()).then(a.cmp(&b)));
            order[0]
        })
        .collect()
}

fn criterion_knn() -> Verdict {
    let mut c = Checks::default();
    let mut r = rng(3);
    for inst in 0..200 {
        let dim = r.random_range(1..6usize);
        let classes = r.random_range(2..5usize);
        let n_train = r.random_range(1..40usize);
        let n_test = r.random_range(1..=50 - n_train);
        // Small integer coordinates produce exact similarity ties.
        let point = |r: &mut ChaCha8Rng| loop {
            let v: Vec<f64> = (0..dim).map(|_| r.random_range(-2i32..=2) as f64).collect();
            if v.iter().any(|x| *x != 0.0) {
                return v;
            }
        };
        let make = |n: usize, r: &mut ChaCha8Rng| {
            let vals: Vec<f64> = (0..n).flat_map(|_| point(r)).collect();
            let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
            Embeddings::new(dim, vals, labels).unwrap()
        };
        let train = make(n_train, &mut r);
        let test = make(n_test, &mut r);
        let k = r.random_range(1..=n_train + 2);
        let (got, _) = knn_predict(&train, &test, k, classes).unwrap();
        let want = knn_oracle(&train, &test, k, classes);
        c.check(got == want, || format!("instance {inst}: {got:?} vs {want:?}"));
    }
    c.verdict(3, "knn", "200/200 instances match the exhaustive oracle".into())
}

// ---------------------------------------------------------------------------
// 4. Metrics

fn naive_kappa(labels: &[usize], preds: &[usize], c: usize) -> Option<f64> {
    let n = labels.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..c {
        for j in 0..c {
            let w = ((i as f64 - j as f64) / (c as f64 - 1.0)).powi(2);
            let o = labels.iter().zip(preds).filter(|(a, b)| **a == i && **b == j).count() as f64;
            let e = labels.iter().filter(|a| **a == i).count() as f64 * preds.iter().filter(|b| **b == j).count() as f64 / n;
            num += w * o;
            den += w * e;
        }
    }
    (den != 0.0).then(|| 1.0 - num / den)
}

fn naive_recall(labels: &[usize], preds: &[usize], c: usize) -> f64 {
    let per: Vec<f64> = (0..c)
        .filter_map(|k| {
            let support = labels.iter().filter(|l| **l == k).count();
            (support > 0).then(|| labels.iter().zip(preds).filter(|(l, p)| **l == k && **p == k).count() as f64 / support as f64)
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

fn naive_binary_auc(scores: &[f64], pos: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn naive_auc(labels: &[usize], scores: &[f64], c: usize) -> Option<f64> {
    let col = |k: usize| (0..labels.len()).map(|i| scores[i * c + k]).collect::<Vec<_>>();
    if c == 2 {
        return naive_binary_auc(&col(1), &labels.iter().map(|l| *l == 1).collect::<Vec<_>>());
    }
    let per: Vec<f64> =
        (0..c).filter_map(|k| naive_binary_auc(&col(k), &labels.iter().map(|l| *l == k).collect::<Vec<_>>())).collect();
    (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
}

fn criterion_metrics() -> Verdict {
    let mut c = Checks::default();
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let classes = r.random_range(2..6usize);
        let n = r.random_range(4..60usize);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let preds: Vec<usize> = labels.iter().map(|l| if r.random_bool(0.6) { *l } else { r.random_range(0..classes) }).collect();
        let scores: Vec<f64> = (0..n * classes).map(|_| (r.random_range(0..8) as f64) / 8.0).collect();
        let p = PredictionSet::new(labels.clone(), preds.clone(), scores.clone(), classes).unwrap();
        match (metrics::quadratic_kappa(&p), naive_kappa(&labels, &preds, classes)) {
            (Ok(a), Some(b)) => {
                worst = worst.max((a - b).abs());
                c.check((a - b).abs() <= 1e-12, || format!("instance {inst}: kappa {a} vs {b}"));
            }
            (Err(_), None) => {}
            (a, b) => c.check(false, || format!("instance {inst}: kappa {a:?} vs {b:?}")),
        }
        let (a, b) = (metrics::macro_recall(&p).unwrap(), naive_recall(&labels, &preds, classes));
        worst = worst.max((a - b).abs());
        c.check((a - b).abs() <= 1e-12, || format!("instance {inst}: recall {a} vs {b}"));
        match (metrics::roc_auc(&p), naive_auc(&labels, &scores, classes)) {
            (Ok(a), Some(b)) => {
                worst = worst.max((a - b).abs());
                c.check((a - b).abs() <= 1e-12, || format!("instance {inst}: auc {a} vs {b}"));
            }
            (Err(_), None) => {}
            (a, b) => c.check(false, || format!("instance {inst}: auc {a:?} vs {b:?}")),
        }
    }
    let a = randn(&mut r, 2000 * 4);
    let zero = fid(&a, 2000, &a, 2000, 4).unwrap().value;
    c.check(zero <= 1e-6, || format!("FID of a set with itself {zero}"));
    let n = 100_000;
    let u = randn(&mut r, n);
    let v: Vec<f64> = randn(&mut r, n).into_iter().map(|z| 1.0 + 2.0 * z).collect();
    let closed = fid(&u, n, &v, n, 1).unwrap().value;
    c.check((closed - 2.0).abs() <= 0.05, || format!("univariate FID {closed} vs 2.0"));
    c.verdict(4, "metrics", format!("max naive deviation {worst:.1e}; FID zero case {zero:.1e}, univariate {closed:.4}"))
}

// ---------------------------------------------------------------------------
// 5. Re-init robustness and drift

fn criterion_resilience() -> Verdict {
    let mut c = Checks::default();
    let ds = ingest_synthetic("t", &GeneratorSpec::target(120, 16, 0.0, 5), 0, "accuracy").unwrap();
    for family in [Family::MiniCnn, Family::MiniVit] {
        let mut net = build_model(&arch(family, Capacity::Tiny, 16, 5, 2)).unwrap();
        init_random(&mut net, 2);
        let initial = snapshot_weights(&net, SnapshotTag::Initial);
        let partition = partition_of(&net).unwrap();
        let s = reinit_robustness(&mut net, &initial, &partition, |n| evaluate(n, &ds.test, "accuracy")).unwrap();
        let base = s.baseline.unwrap();
        c.check(s.values().iter().all(|v| v.to_bits() == base.to_bits()), || format!("{family}: {:?} vs baseline {base}", s.values()));
        let same = l2_drift(&initial, &snapshot_weights(&net, SnapshotTag::Best), &partition).unwrap();
        c.check(same.values().iter().all(|v| *v == 0.0), || format!("{family}: drift {:?} on unchanged weights", same.values()));
        for (gi, g) in partition.groups.iter().enumerate() {
            let mut moved = net.clone();
            let e = moved.params_mut().entries_mut().iter_mut().find(|e| g.module_ids.contains(&e.module) && e.role.is_learnable());
            let Some(e) = e else { continue };
            e.value[0] += 0.25;
            let d = l2_drift(&initial, &snapshot_weights(&moved, SnapshotTag::Best), &partition).unwrap().values();
            c.check(d[gi] > 0.0 && d.iter().enumerate().all(|(i, v)| i == gi || *v == 0.0), || format!("{family} {}: {d:?}", g.group_id));
        }
    }
    c.verdict(5, "reinit_and_drift", "untrained re-init equals baseline exactly; drift zero iff unchanged".into())
}

// ---------------------------------------------------------------------------
// 6. Attended distance

fn criterion_attdist() -> Verdict {
    let mut c = Checks::default();
    let t = 17;
    let mut eye = vec![0.0f32; 2 * 3 * t * t];
    for bh in 0..6 {
        for i in 0..t {
            eye[bh * t * t + i * t + i] = 1.0;
        }
    }
    let identity = AttentionMap { layer_id: "b".into(), batch: 2, heads: 3, tokens: t, cls_index: Some(0), values: eye };
    let d0 = mean_attended_distance_layer(&identity, (4, 4)).unwrap();
    c.check(d0 == 0.0, || format!("identity gives {d0}"));
    let uniform = AttentionMap { layer_id: "b".into(), batch: 1, heads: 1, tokens: 4, cls_index: None, values: vec![0.25; 16] };
    let du = mean_attended_distance_layer(&uniform, (2, 2)).unwrap();
    let want = (2.0 + 2f64.sqrt()) / 4.0;
    c.check((du - want).abs() <= 1e-9, || format!("uniform 2x2 gives {du}, expected {want}"));
    c.verdict(6, "attended_distance", format!("identity {d0}; uniform {du:.12}"))
}

// ---------------------------------------------------------------------------
// 7. Persistence and reproducibility

fn criterion_persistence() -> Verdict {
    let mut c = Checks::default();
    let tmp = tempfile::tempdir().unwrap();
    let ds = ingest_synthetic("t", &GeneratorSpec::target(120, 16, 0.0, 6), 0, "accuracy").unwrap();
    let cfg = TrainConfig { max_iters: 12, warmup_iters: 3, val_every: 4, batch_size: 16, base_lr: 1e-3, ri_lr: 1e-3, ..TrainConfig::default() };
    for family in [Family::MiniCnn, Family::MiniVit] {
        let spec = arch(family, Capacity::Tiny, 16, 5, 3);
        let run = || {
            let mut net = build_model(&spec).unwrap();
            init_random(&mut net, 3);
            fine_tune(&mut net, &ds, &cfg, &RunContext { run_id: "p".into(), init: InitScheme::random(3) }).unwrap()
        };
        let a = run();
        let b = run();
        c.check(a.same_outcome(&b), || format!("{family}: single-threaded reruns differ"));
        let path = save_checkpoint(&a.best, tmp.path(), &format!("{family}")).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        c.check(loaded.same_values(&a.best) && loaded.arch() == a.best.arch() && loaded.tag() == a.best.tag(), || {
            format!("{family}: checkpoint round trip changed the snapshot")
        });
        let dir = tmp.path().join(format!("run-{family}"));
        a.save(&dir).unwrap();
        let back = RunRecord::load(&dir).unwrap();
        c.check(back.meta == a.meta && back.same_outcome(&a), || format!("{family}: run record round trip differs"));
        let mut restored: ProbeableNetwork = build_model(&spec).unwrap();
        reuselab::netlab::restore_all(&mut restored, &back.best).unwrap();
        let score = evaluate(&restored, &ds.test, "accuracy").unwrap();
        c.check(score.to_bits() == a.meta.final_test_score.to_bits(), || format!("{family}: reloaded score {score}"));
    }
    c.verdict(7, "persistence", "checkpoints and run records bit-exact; reruns bit-identical".into())
}

#[test]
fn property_suite() {
    let verdicts = vec![
        criterion_cka(),
        criterion_initializers(),
        criterion_knn(),
        criterion_metrics(),
        criterion_resilience(),
        criterion_attdist(),
        criterion_persistence(),
    ];
    verdicts.iter().for_each(announce);
    conclude(&verdicts);
}

// ---------------------------------------------------------------------------
// 8–13. Desk-scale trends

const CNN: &str = "mini_cnn/tiny";
const VIT: &str = "mini_vit/tiny";
const VIT_HALF: &str = "mini_vit/tiny/trunc2";
const LOW: &str = "target1k";
const HIGH: &str = "target1k_shifted";

fn trend_config(out: &std::path::Path) -> String {
    format!(
        r#"
version = 1
output_dir = "{out}"
seeds = [0, 1, 2, 3, 4]

[[datasets]]
id = "shapes10"
generator = {{ corpus = "shapes10", samples = 8000, image_size = 16, seed = 0 }}

[[datasets]]
id = "{LOW}"
split_seed = 1
generator = {{ corpus = "target5", samples = 1000, image_size = 16, shift = 0.0, seed = 1 }}

[[datasets]]
id = "{HIGH}"
split_seed = 1
generator = {{ corpus = "target5", samples = 1000, image_size = 16, shift = 1.0, seed = 1 }}

[pretrain]
dataset = "shapes10"
train = {{ base_lr = 1e-3, ri_lr = 1e-3, warmup_iters = 100, val_every = 100, batch_size = 64, max_iters = 1500 }}

[train]
base_lr = 1e-3
ri_lr = 1e-3
warmup_iters = 50
val_every = 25
plateau_patience = 10
batch_size = 32
max_iters = 800

[[models]]
family = "mini_cnn"
capacity = "tiny"

[[models]]
family = "mini_vit"
capacity = "tiny"
train = {{ base_lr = 5e-4, ri_lr = 5e-4, weight_decay = 0.05 }}
pretrain = {{ max_iters = 4000, weight_decay = 0.05 }}

[[models]]
family = "mini_vit"
capacity = "tiny"
truncate = 2
train = {{ base_lr = 5e-4, ri_lr = 5e-4, weight_decay = 0.05 }}
pretrain = {{ max_iters = 4000, weight_decay = 0.05 }}

[[init_schemes]]
kind = "RI"
models = ["{CNN}", "{VIT}"]

[[init_schemes]]
kind = "WT_ST"
sweep = true
models = ["{CNN}", "{VIT}"]
datasets = ["{LOW}"]

[[init_schemes]]
kind = "WT"
models = ["{VIT_HALF}"]
datasets = ["{LOW}"]

[[init_schemes]]
kind = "WT"
models = ["{CNN}", "{VIT}"]
datasets = ["{HIGH}"]
"#,
        out = out.display()
    )
}

type Scores = BTreeMap<(String, String, String), Vec<(u64, f64, usize)>>;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn scores(s: &Scores, model: &str, dataset: &str, init: &str) -> Vec<f64> {
    s.get(&(model.into(), dataset.into(), init.into())).map(|v| v.iter().map(|x| x.1).collect()).unwrap_or_default()
}

fn conv(s: &Scores, model: &str, dataset: &str, init: &str) -> Vec<f64> {
    s.get(&(model.into(), dataset.into(), init.into())).map(|v| v.iter().map(|x| x.2 as f64).collect()).unwrap_or_default()
}

fn sweep_labels(groups: usize) -> Vec<String> {
    (0..=groups)
        .map(|n| InitScheme { kind: InitKind::WtSt, n: Some(n), source_checkpoint: None, seed: 0 }.canonical(groups).label(groups))
        .collect()
}

fn first_half_share(means: &[f64]) -> Option<f64> {
    let total = means.last()? - means.first()?;
    let half = (means.len() - 1) / 2;
    (total > 0.0).then(|| (means[half] - means[0]) / total)
}

#[test]
fn trend_suite() {
    if std::env::var_os("REUSELAB_SKIP_TREND").is_some() {
        let _ = writeln!(std::io::stderr(), "criteria 8-13 skipped (REUSELAB_SKIP_TREND set)");
        return;
    }
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("trend-suite");
    let cfg = ExperimentConfig::from_toml(&trend_config(&out)).unwrap();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let outcome = run_matrix(&cfg, RunOptions { workers }).unwrap();
    assert!(outcome.is_complete(), "trend cells failed: {:?}", outcome.failures);
    report(&out, &out.join("report"), &ReportSpec::with_figures()).unwrap();

    let mut s: Scores = BTreeMap::new();
    for r in load_runs(&out).unwrap() {
        s.entry((r.cell.model.clone(), r.cell.dataset.clone(), r.cell.init_label.clone()))
            .or_default()
            .push((r.cell.seed, r.score, r.best_iter));
    }
    let m = |model: &str, dataset: &str, init: &str| mean(&scores(&s, model, dataset, init));
    let mut verdicts = Vec::new();

    // 8. Transfer benefit on the small target.
    let (wt, st, ri) = (m(VIT, LOW, "WT"), m(VIT, LOW, "ST"), m(VIT, LOW, "RI"));
    let mut c = Checks::default();
    c.check(wt - ri >= 0.02, || format!("ViT WT {wt:.3} − RI {ri:.3} < 0.02"));
    c.check(wt > st, || format!("ViT WT {wt:.3} <= ST {st:.3}"));
    verdicts.push(c.verdict(8, "transfer_benefit", format!("ViT WT {wt:.3}, ST {st:.3}, RI {ri:.3}")));

    // 9. Inductive-bias ordering of the WT − ST gap.
    let vit_gap = wt - st;
    let cnn_gap = m(CNN, LOW, "WT") - m(CNN, LOW, "ST");
    let mut c = Checks::default();
    c.check(vit_gap > cnn_gap, || format!("ViT gap {vit_gap:.3} <= CNN gap {cnn_gap:.3}"));
    verdicts.push(c.verdict(9, "inductive_bias", format!("WT−ST gap: ViT {vit_gap:.3}, CNN {cnn_gap:.3}")));

    // 10 and 11. Depth sweeps.
    let sweep = |model: &str, groups: usize| -> (Vec<f64>, Vec<f64>) {
        let labels = sweep_labels(groups);
        (labels.iter().map(|l| m(model, LOW, l)).collect(), labels.iter().map(|l| mean(&conv(&s, model, LOW, l))).collect())
    };
    let groups = |label: &str| reuselab::netlab::partition_for_arch_id(label).unwrap().len();
    let (vit_scores, vit_conv) = sweep(VIT, groups(VIT));
    let (cnn_scores, cnn_conv) = sweep(CNN, groups(CNN));
    let vit_share = first_half_share(&vit_scores);
    let cnn_share = first_half_share(&cnn_scores);
    let mut c = Checks::default();
    c.check(vit_share.is_some_and(|v| v >= 0.6), || format!("ViT first-half share {vit_share:?} (scores {vit_scores:.3?})"));
    c.check(cnn_share.is_some_and(|v| (0.3..=0.7).contains(&v)), || format!("CNN first-half share {cnn_share:?} (scores {cnn_scores:.3?})"));
    verdicts.push(c.verdict(
        10,
        "depth_sweep",
        format!("first-half gain share ViT {:.2}, CNN {:.2}", vit_share.unwrap_or(f64::NAN), cnn_share.unwrap_or(f64::NAN)),
    ));

    // Asserted on the CNN sweep; the ViT sweep is reported alongside.
    let violations = |xs: &[f64]| xs.windows(2).filter(|w| w[1] > w[0]).count();
    let mut c = Checks::default();
    c.check(violations(&cnn_conv) <= 1, || format!("CNN convergence iters {cnn_conv:.0?} has {} increases", violations(&cnn_conv)));
    verdicts.push(c.verdict(
        11,
        "convergence",
        format!("mean best iteration by depth CNN {cnn_conv:.0?} ({} increases), ViT {vit_conv:.0?} ({} increases)", violations(&cnn_conv), violations(&vit_conv)),
    ));

    // 12. Truncation.
    let half = m(VIT_HALF, LOW, "WT");
    let mut c = Checks::default();
    c.check((half - wt).abs() <= 0.03, || format!("truncated {half:.3} vs full {wt:.3}"));
    verdicts.push(c.verdict(12, "truncation", format!("half-depth WT {half:.3} vs full WT {wt:.3}")));

    // 13. Domain distance direction.
    let fid_of = |id: &str| {
        reuselab::data::DatasetManifest::read(&out.join("datasets").join(format!("{id}.json"))).unwrap().fid_to_source.unwrap_or(f64::NAN)
    };
    let (fid_low, fid_high) = (fid_of(LOW), fid_of(HIGH));
    let gain = |model: &str, d: &str| m(model, d, "WT") / m(model, d, "RI");
    let mut c = Checks::default();
    c.check(fid_low < fid_high, || format!("FID low-shift {fid_low:.3} >= high-shift {fid_high:.3}"));
    let mut gains = Vec::new();
    for model in [VIT, CNN] {
        let (g_low, g_high) = (gain(model, LOW), gain(model, HIGH));
        c.check(g_low > g_high, || format!("{model} WT/RI gain {g_low:.3} on {LOW} <= {g_high:.3} on {HIGH}"));
        gains.push(format!("{model} {g_low:.3} vs {g_high:.3}"));
    }
    verdicts.push(c.verdict(13, "domain_distance", format!("FID {fid_low:.2} < {fid_high:.2}; WT/RI gain {}", gains.join(", "))));

    verdicts.iter().for_each(announce);
    conclude(&verdicts);
}

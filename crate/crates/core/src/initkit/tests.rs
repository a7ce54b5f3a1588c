use rand::Rng;

use super::*;
use crate::netlab::{
    build_model, snapshot_weights, truncate, ArchSpec, Capacity, Family, InputShape, SnapshotTag, SnapshotTensor,
};

fn spec(family: Family, capacity: Capacity, seed: u64) -> ArchSpec {
    ArchSpec::new(family, capacity, InputShape::new(32, 32, 3), 10, seed)
}

/// A source network whose every learnable tensor has its own nonzero mean and spread.
fn fake_pretrained(family: Family, capacity: Capacity) -> WeightSnapshot {
    let mut net = build_model(&spec(family, capacity, 99)).unwrap();
    let mut rng = tensor_rng(7, "fake", "pretrained");
    for e in net.params_mut().entries_mut() {
        let shift: f32 = rng.random_range(-0.5..0.5);
        let spread: f32 = rng.random_range(0.05..0.3);
        for v in e.value.iter_mut() {
            *v = shift + spread * rng.random_range(-1.0f32..1.0);
        }
    }
    snapshot_weights(&net, SnapshotTag::Pretrained)
}

fn bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn stats_of_simple_tensors() {
    let net = build_model(&spec(Family::MiniCnn, Capacity::Tiny, 0)).unwrap();
    let snap = snapshot_weights(&net, SnapshotTag::Initial);
    let stats = weight_stats(&snap).unwrap();
    let scale = stats.get("stem_norm.weight").unwrap();
    assert_eq!((scale.mu, scale.sigma), (1.0, 0.0));
    assert!(stats.get("stem_norm.running_mean").is_none(), "buffers carry no stats");
    assert_eq!(stats, weight_stats(&snap.retagged(SnapshotTag::Best, false)).unwrap());

    let (mu, sigma) = mean_and_sigma(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(mu, 2.5);
    assert!((sigma - 1.25f64.sqrt()).abs() < 1e-15);
    let (mu, sigma) = mean_and_sigma(&[0.7; 9]);
    assert!((mu - 0.7f32 as f64).abs() < 1e-12 && sigma < 1e-12);
}

#[test]
fn weight_stats_rejects_empty() {
    let s = WeightSnapshot::from_parts(
        spec(Family::MiniCnn, Capacity::Tiny, 0),
        "mini_cnn/tiny".into(),
        SnapshotTag::Initial,
        String::new(),
        Default::default(),
    );
    assert!(matches!(weight_stats(&s), Err(Error::Data(_))));
    let _unused: Option<SnapshotTensor> = None;
}

#[test]
fn kaiming_statistics() {
    let mut net = build_model(&spec(Family::MiniCnn, Capacity::Small, 0)).unwrap();
    init_random(&mut net, 3);
    let mut checked = 0;
    for e in net.params().entries() {
        match e.role {
            TensorRole::Weight if e.numel() >= 10_000 => {
                let (_, sd) = mean_and_sigma(&e.value);
                let want = (2.0 / e.fan_in as f64).sqrt();
                assert!((sd / want - 1.0).abs() < 0.05, "{}: {sd} vs {want}", e.name);
                checked += 1;
            }
            TensorRole::NormScale => assert!(e.value.iter().all(|v| *v == 1.0)),
            TensorRole::Bias | TensorRole::NormShift => assert!(e.value.iter().all(|v| *v == 0.0)),
            _ => {}
        }
    }
    assert!(checked > 3);
    let mut again = net.clone();
    init_random(&mut again, 3);
    assert!(snapshot_weights(&again, SnapshotTag::Initial).same_values(&snapshot_weights(&net, SnapshotTag::Initial)));
}

#[test]
fn stats_transfer_fidelity() {
    for family in [Family::MiniCnn, Family::MiniVit] {
        let src = fake_pretrained(family, Capacity::Small);
        let stats = weight_stats(&src).unwrap();
        let mut net = build_model(&spec(family, Capacity::Small, 0)).unwrap();
        init_stats_transfer(&mut net, &stats, 5).unwrap();
        for e in net.params().entries().iter().filter(|e| e.module != "head" && e.role.is_learnable()) {
            let s = stats.get(&e.name).unwrap();
            assert!(!bits(&e.value, &src.tensor(&e.name).unwrap().values), "{} copied", e.name);
            if e.numel() >= 10_000 {
                let (mu, sd) = mean_and_sigma(&e.value);
                assert!((mu - s.mu).abs() <= 4.0 * s.sigma / (s.count as f64).sqrt(), "{} mean", e.name);
                assert!((sd / s.sigma - 1.0).abs() < 0.05, "{} sigma", e.name);
            }
        }
        for e in net.params().entries().iter().filter(|e| e.role.is_buffer()) {
            let want = if e.role == TensorRole::RunningVar { 1.0 } else { 0.0 };
            assert!(e.value.iter().all(|v| *v == want));
        }
    }
}

#[test]
fn zero_sigma_fills_constant() {
    let mut net = build_model(&spec(Family::MiniCnn, Capacity::Tiny, 0)).unwrap();
    let stats = LayerStats {
        tensors: net
            .params()
            .entries()
            .iter()
            .filter(|e| e.role.is_learnable())
            .enumerate()
            .map(|(i, e)| TensorStats { name: e.name.clone(), mu: i as f64 * 0.25, sigma: 0.0, count: e.numel() })
            .collect(),
    };
    init_stats_transfer(&mut net, &stats, 1).unwrap();
    for e in net.params().entries().iter().filter(|e| e.module != "head" && e.role.is_learnable()) {
        let mu = stats.get(&e.name).unwrap().mu as f32;
        assert!(e.value.iter().all(|v| *v == mu));
    }
}

#[test]
fn stats_mismatch_is_rejected() {
    let mut net = build_model(&spec(Family::MiniCnn, Capacity::Tiny, 0)).unwrap();
    let mut stats = weight_stats(&snapshot_weights(&net, SnapshotTag::Initial)).unwrap();
    stats.tensors[0].count += 1;
    assert!(matches!(init_stats_transfer(&mut net, &stats, 0), Err(Error::Compatibility(_))));
    stats.tensors.remove(0);
    assert!(matches!(init_stats_transfer(&mut net, &stats, 0), Err(Error::Compatibility(_))));
}

#[test]
fn weight_transfer_copies_everything_but_head() {
    let src = fake_pretrained(Family::MiniVit, Capacity::Tiny);
    let mut net = build_model(&spec(Family::MiniVit, Capacity::Tiny, 0)).unwrap();
    init_weight_transfer(&mut net, &src, 4).unwrap();
    for e in net.params().entries() {
        let same = bits(&e.value, &src.tensor(&e.name).unwrap().values);
        assert_eq!(same, e.module != "head", "{}", e.name);
    }
    let cnn = fake_pretrained(Family::MiniCnn, Capacity::Tiny);
    assert!(matches!(init_weight_transfer(&mut net, &cnn, 0), Err(Error::Compatibility(_))));
    let small = fake_pretrained(Family::MiniVit, Capacity::Small);
    assert!(matches!(init_weight_transfer(&mut net, &small, 0), Err(Error::Compatibility(_))));
}

#[test]
fn weight_transfer_into_truncated_vit() {
    let src = fake_pretrained(Family::MiniVit, Capacity::Small);
    let full = build_model(&spec(Family::MiniVit, Capacity::Small, 0)).unwrap();
    let mut short = truncate(&full, 3).unwrap();
    init_weight_transfer(&mut short, &src, 0).unwrap();
    for e in short.params().entries().iter().filter(|e| e.module != "head") {
        assert!(bits(&e.value, &src.tensor(&e.name).unwrap().values), "{}", e.name);
    }
}

#[test]
fn prefix_equality_for_every_depth() {
    for family in [Family::MiniCnn, Family::MiniVit] {
        let src = fake_pretrained(family, Capacity::Tiny);
        let base = build_model(&spec(family, Capacity::Tiny, 0)).unwrap();
        let partition = crate::netlab::partition_of(&base).unwrap();
        for n in 0..=partition.len() {
            let mut net = base.clone();
            build_wt_st(&mut net, &src, n, 11).unwrap();
            for e in net.params().entries().iter().filter(|e| e.role.is_learnable()) {
                let equal = bits(&e.value, &src.tensor(&e.name).unwrap().values);
                let expected = partition.group_of_module(&e.module).is_some_and(|g| g < n);
                assert_eq!(equal, expected, "{family} n={n} {}", e.name);
            }
        }
        let mut net = base.clone();
        assert!(matches!(build_wt_st(&mut net, &src, partition.len() + 1, 0), Err(Error::Config(_))));
    }
}

#[test]
fn cnn_depth_three_transfers_stem_and_stage1() {
    let src = fake_pretrained(Family::MiniCnn, Capacity::Small);
    let mut net = build_model(&spec(Family::MiniCnn, Capacity::Small, 0)).unwrap();
    build_wt_st(&mut net, &src, 3, 2).unwrap();
    for e in net.params().entries().iter().filter(|e| e.role.is_learnable()) {
        let equal = bits(&e.value, &src.tensor(&e.name).unwrap().values);
        let transferred = e.module == "stem_conv" || e.module == "stem_norm" || e.module.starts_with("stage1.");
        assert_eq!(equal, transferred, "{}", e.name);
    }
}

#[test]
fn endpoints_are_canonical() {
    for family in [Family::MiniCnn, Family::MiniVit] {
        let src = fake_pretrained(family, Capacity::Tiny);
        let base = build_model(&spec(family, Capacity::Tiny, 0)).unwrap();
        let groups = crate::netlab::partition_of(&base).unwrap().len();

        let mut a = base.clone();
        build_wt_st(&mut a, &src, 0, 9).unwrap();
        let mut b = base.clone();
        init_stats_transfer(&mut b, &weight_stats(&src).unwrap(), 9).unwrap();
        assert!(snapshot_weights(&a, SnapshotTag::Initial).same_values(&snapshot_weights(&b, SnapshotTag::Initial)));

        let mut c = base.clone();
        build_wt_st(&mut c, &src, groups, 9).unwrap();
        let mut d = base.clone();
        init_weight_transfer(&mut d, &src, 9).unwrap();
        assert!(snapshot_weights(&c, SnapshotTag::Initial).same_values(&snapshot_weights(&d, SnapshotTag::Initial)));

        let scheme = InitScheme { kind: InitKind::WtSt, n: Some(0), source_checkpoint: None, seed: 9 };
        assert_eq!(scheme.canonical(groups).kind, InitKind::St);
        let scheme = InitScheme { n: Some(groups), ..scheme };
        assert_eq!(scheme.canonical(groups).kind, InitKind::Wt);
        let mut e = base.clone();
        apply_scheme(&mut e, &scheme, Some(&src)).unwrap();
        assert!(snapshot_weights(&e, SnapshotTag::Initial).same_values(&snapshot_weights(&d, SnapshotTag::Initial)));
    }
}

#[test]
fn scheme_labels_and_serialization() {
    let s = InitScheme { kind: InitKind::WtSt, n: Some(3), source_checkpoint: Some("p.json".into()), seed: 1 };
    assert_eq!(s.label(6), "WT-ST-3/3");
    let text = toml::to_string(&s).unwrap();
    assert!(text.contains("kind = \"WT_ST\""));
    assert_eq!(toml::from_str::<InitScheme>(&text).unwrap(), s);
    assert!(toml::from_str::<InitScheme>("kind = \"WT\"\nseed = 1\nbogus = 2").is_err());
    let mut net = build_model(&spec(Family::MiniCnn, Capacity::Tiny, 0)).unwrap();
    assert!(matches!(apply_scheme(&mut net, &InitScheme { kind: InitKind::Wt, ..s }, None), Err(Error::Config(_))));
}

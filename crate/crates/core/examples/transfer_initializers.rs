//! Pretrains a tiny source model for a few steps, then initializes a target
//! model with WT, ST, RI and every WT-ST depth, reporting which groups match
//! the source exactly.

use reuselab::data::{ingest_synthetic, GeneratorSpec};
use reuselab::initkit::{apply_scheme, InitKind, InitScheme};
use reuselab::netlab::{build_model, partition_of, ArchSpec, Capacity, Family, InputShape};
use reuselab::trainbench::{pretrain_source, TrainConfig};

fn main() -> reuselab::Result<()> {
    let source = ingest_synthetic("shapes10", &GeneratorSpec::source(1500, 16, 0), 0, "accuracy")?;
    let shape = InputShape::new(16, 16, 3);
    let spec = ArchSpec::new(Family::MiniCnn, Capacity::Tiny, shape, 10, 0);
    let cfg = TrainConfig { ri_lr: 1e-3, base_lr: 1e-3, max_iters: 300, warmup_iters: 20, val_every: 50, batch_size: 32, ..TrainConfig::default() };
    let (snap, record) = pretrain_source(&spec, &source, &cfg)?;
    println!("source {} val accuracy {:.3}", snap.arch_id(), record.meta.best_val);

    let target = ArchSpec::new(Family::MiniCnn, Capacity::Tiny, shape, 5, 1);
    let groups = partition_of(&build_model(&target)?)?;
    let mut schemes = vec![InitScheme::random(1)];
    schemes.extend((0..=groups.len()).map(|n| InitScheme { kind: InitKind::WtSt, n: Some(n), source_checkpoint: None, seed: 1 }));
    for scheme in schemes {
        let mut net = build_model(&target)?;
        apply_scheme(&mut net, &scheme, Some(&snap))?;
        let copied: Vec<&str> = groups
            .groups
            .iter()
            .filter(|g| {
                net.params()
                    .entries()
                    .iter()
                    .filter(|e| g.module_ids.contains(&e.module))
                    .all(|e| snap.tensor(&e.name).is_some_and(|t| t.values == e.value))
            })
            .map(|g| g.group_id.as_str())
            .collect();
        println!("{:<10} groups equal to the source: {copied:?}", scheme.canonical(groups.len()).label(groups.len()));
    }
    Ok(())
}

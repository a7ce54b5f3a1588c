//! Fine-tunes a randomly initialized and a weight-transferred CNN on a small
//! target task and prints their validation traces.

use reuselab::data::{ingest_synthetic, GeneratorSpec};
use reuselab::initkit::{apply_scheme, InitKind, InitScheme};
use reuselab::netlab::{build_model, ArchSpec, Capacity, Family, InputShape};
use reuselab::trainbench::{fine_tune, pretrain_source, RunContext, TrainConfig};

fn main() -> reuselab::Result<()> {
    let shape = InputShape::new(16, 16, 3);
    let source = ingest_synthetic("shapes10", &GeneratorSpec::source(1200, 16, 0), 0, "accuracy")?;
    let target = ingest_synthetic("target5", &GeneratorSpec::target(300, 16, 0.0, 1), 1, "accuracy")?;
    let cfg = TrainConfig { ri_lr: 1e-3, base_lr: 1e-3, max_iters: 150, warmup_iters: 15, val_every: 25, batch_size: 32, ..TrainConfig::default() };
    let (snap, _) = pretrain_source(&ArchSpec::new(Family::MiniCnn, Capacity::Tiny, shape, 10, 0), &source, &cfg)?;

    for kind in [InitKind::Ri, InitKind::Wt] {
        let scheme = InitScheme { kind, n: None, source_checkpoint: None, seed: 3 };
        let mut net = build_model(&ArchSpec::new(Family::MiniCnn, Capacity::Tiny, shape, 5, 3))?;
        apply_scheme(&mut net, &scheme, Some(&snap))?;
        let rec = fine_tune(&mut net, &target, &TrainConfig { seed: 3, ..cfg.clone() }, &RunContext { run_id: kind.as_str().into(), init: scheme })?;
        let trace: Vec<String> = rec.meta.trace.iter().map(|p| format!("{}:{:.2}", p.iteration, p.metric)).collect();
        println!("{:<3} test {:.3} best at {:>3}  val {}", kind.as_str(), rec.meta.final_test_score, rec.meta.best_iteration, trace.join(" "));
    }
    Ok(())
}

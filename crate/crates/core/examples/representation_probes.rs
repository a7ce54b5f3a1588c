//! Runs the representation probes on a briefly fine-tuned ViT: layer-wise
//! k-NN, re-initialization robustness, weight drift, attended distance and a
//! CKA map between the initial and fine-tuned networks.

use reuselab::data::{ingest_synthetic, GeneratorSpec};
use reuselab::initkit::init_random;
use reuselab::netlab::{build_model, partition_of, snapshot_weights, ArchSpec, Capacity, Family, InputShape, SnapshotTag};
use reuselab::probes::{cka_map, l2_drift, layerwise_knn, mean_attended_distance, reinit_robustness, EmbedMode, LayerSeries};
use reuselab::trainbench::{evaluate, fine_tune, RunContext, TrainConfig};

fn show(name: &str, s: &LayerSeries) {
    let cells: Vec<String> = s.points.iter().map(|p| format!("{}={:.4e}", p.id, p.value)).collect();
    println!("{name:<10} {}", cells.join("  "));
}

fn main() -> reuselab::Result<()> {
    let data = ingest_synthetic("target5", &GeneratorSpec::target(800, 16, 0.0, 2), 0, "accuracy")?;
    let spec = ArchSpec::new(Family::MiniVit, Capacity::Tiny, InputShape::new(16, 16, 3), 5, 0);
    let mut net = build_model(&spec)?;
    init_random(&mut net, 0);
    let initial_net = net.clone();
    let initial = snapshot_weights(&net, SnapshotTag::Initial);
    let cfg = TrainConfig { max_iters: 400, warmup_iters: 30, val_every: 25, batch_size: 32, ri_lr: 5e-4, base_lr: 5e-4, ..TrainConfig::default() };
    let rec = fine_tune(&mut net, &data, &cfg, &RunContext { run_id: "demo".into(), init: reuselab::initkit::InitScheme::random(0) })?;
    println!("test accuracy {:.3}", rec.meta.final_test_score);

    let partition = partition_of(&net)?;
    show("knn", &layerwise_knn(&net, &data.train, &data.test, &partition, EmbedMode::Cls, 10, "accuracy")?);
    let robust = reinit_robustness(&mut net, &initial, &partition, |n| evaluate(n, &data.test, "accuracy"))?;
    show("reinit", &robust);
    show("l2 drift", &l2_drift(&initial, &rec.best, &partition)?);
    let batch = data.test.batch(0, data.test.len().min(64));
    show("attdist", &mean_attended_distance(&net.attention_maps(&batch.images)?, net.patch_grid().unwrap())?);

    let taps = partition.tap_ids();
    let m = cka_map(&[(&initial_net, &net)], &data.test.batch(0, data.test.len().min(256)), &taps, &taps, 128)?;
    println!("cka diagonal (initial vs fine-tuned) {:.3?}", m.diagonal());
    Ok(())
}
